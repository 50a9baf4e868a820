//! Seeded synthetic corpora, fixture directories and record sets shared by
//! the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{DateTime, Duration, TimeZone, Utc};
use faunawatch::domain::{parse_family_config, TimeWindow};
use faunawatch::fetcher::record_id;
use faunawatch::gdelt::build_queries;
use faunawatch::relevance::{BayesModel, Class};
use faunawatch::store::ArticleRecord;
use faunawatch::transport::{FixturePages, FixtureSearch};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RELEVANT_WORDS: &[&str] = &[
    "ivory",
    "poaching",
    "seizure",
    "rangers",
    "trafficking",
    "smuggled",
    "customs",
    "horn",
    "tusks",
    "reserve",
    "wildlife",
    "conservation",
    "sanctuary",
    "protected",
    "endangered",
    "species",
    "cites",
    "investigators",
    "contraband",
    "shipment",
    "seized",
    "arrested",
    "habitat",
    "patrol",
    "carcass",
    "syndicate",
    "illegal",
    "permit",
    "rescue",
    "trade",
    "scales",
    "officials",
];

pub const IRRELEVANT_WORDS: &[&str] = &[
    "football",
    "mascot",
    "season",
    "league",
    "striker",
    "goal",
    "championship",
    "golf",
    "concert",
    "album",
    "festival",
    "movie",
    "actor",
    "premiere",
    "fashion",
    "brand",
    "stadium",
    "coach",
    "transfer",
    "fans",
    "trophy",
    "playoff",
    "restaurant",
    "menu",
    "recipe",
    "tour",
    "ticket",
    "sponsor",
    "celebrity",
    "episode",
    "comedy",
    "chart",
];

/// Words common to both classes, including a few lexicon entries so that
/// scored articles do not all come out neutral.
pub const SHARED_WORDS: &[&str] = &[
    "the", "said", "on", "with", "year", "week", "report", "city", "people", "new", "after",
    "local", "good", "bad", "hope", "great", "threat", "crisis", "success", "loss", "team", "park",
    "world", "very", "not", "news",
];

/// One document drawn from the class's biased word distribution.
pub fn synth_text(rng: &mut impl Rng, class: Class, words: usize) -> String {
    let (own, other) = match class {
        Class::Relevant => (RELEVANT_WORDS, IRRELEVANT_WORDS),
        Class::Irrelevant => (IRRELEVANT_WORDS, RELEVANT_WORDS),
    };
    (0..words)
        .map(|_| {
            let u: f64 = rng.gen();
            let pool = if u < 0.4 {
                own
            } else if u < 0.5 {
                other
            } else {
                SHARED_WORDS
            };
            *pool.choose(rng).expect("nonempty pool")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// `n` labeled documents with balanced classes in random order.
pub fn synth_corpus(seed: u64, n: usize) -> Vec<(String, Class)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs: Vec<(String, Class)> = (0..n)
        .map(|i| {
            let class = if i % 2 == 0 {
                Class::Relevant
            } else {
                Class::Irrelevant
            };
            let len = rng.gen_range(30..80);
            (synth_text(&mut rng, class, len), class)
        })
        .collect();
    docs.shuffle(&mut rng);
    docs
}

pub fn synth_model(seed: u64) -> BayesModel {
    let corpus = synth_corpus(seed, 400);
    BayesModel::train(corpus.iter().map(|(t, c)| (t.as_str(), *c))).expect("both classes present")
}

pub const FIXTURE_FAMILIES: &str = r#"{
  "elephant": {"main": "elephant", "additional": ["ivory", "poach", "wildlife"]},
  "pangolin": {"main": "pangolin", "additional": ["scale", "seizure"]}
}"#;

const COUNTRIES: &[&str] = &[
    "India",
    "Kenya",
    "United Kingdom",
    "United States",
    "South Africa",
    "Vietnam",
    "China",
    "Atlantis",
];

pub fn fixture_window() -> TimeWindow {
    let start = Utc.with_ymd_and_hms(2019, 6, 1, 0, 0, 0).unwrap();
    TimeWindow::new(start, start + Duration::hours(72)).unwrap()
}

pub const FIXED_CLOCK: &str = "2019-06-05T00:00:00Z";

#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub root: PathBuf,
    pub config: PathBuf,
    pub fixtures: PathBuf,
    pub store: PathBuf,
    pub model: PathBuf,
    pub families: PathBuf,
    pub ranges: PathBuf,
    pub window: TimeWindow,
    /// Ids of the articles generated from the relevant distribution.
    pub relevant_ids: BTreeSet<String>,
    pub all_ids: Vec<String>,
}

fn html_page(title: &str, paragraphs: &[String]) -> String {
    let mut body = String::from("<!DOCTYPE html><html><head><meta charset=\"utf-8\"><title>");
    body.push_str(title);
    body.push_str(
        "</title><script>var tracking = 'not article text at all';</script></head><body>",
    );
    body.push_str("<nav><ul><li>Home and world news section</li><li>Sport results and fixtures today</li></ul></nav>");
    body.push_str(&format!("<article><h1>{title}</h1>"));
    for p in paragraphs {
        body.push_str(&format!("<p>{p}.</p>"));
    }
    body.push_str("<p>Share</p></article><footer><p>Copyright the example news company, all rights reserved</p></footer></body></html>");
    body
}

/// Writes a complete offline setup under `root`: search and page fixtures
/// for `articles` unique articles across two taxa (`relevant` of them drawn
/// from the relevant distribution), a model trained on a separate synthetic
/// corpus, the bundled lexicon files and a config pointing at all of it.
pub fn build_fixture_set(root: &Path, seed: u64, articles: usize, relevant: usize) -> FixtureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let window = fixture_window();
    let fixtures = root.join("fixtures");
    let families_path = root.join("families.json");
    fs::create_dir_all(root).unwrap();
    fs::write(&families_path, FIXTURE_FAMILIES).unwrap();
    let families = parse_family_config(FIXTURE_FAMILIES).unwrap();

    let mut order: Vec<usize> = (0..articles).collect();
    order.shuffle(&mut rng);
    let relevant_idx: BTreeSet<usize> = order.into_iter().take(relevant).collect();

    let pages = FixturePages::new(fixtures.join("pages"));
    let search = FixtureSearch::new(fixtures.join("gdelt"));
    // per family, per query: artlist entries
    let mut lists: Vec<Vec<Vec<serde_json::Value>>> = families
        .iter()
        .map(|f| vec![Vec::new(); build_queries(f, window).len()])
        .collect();
    let mut relevant_ids = BTreeSet::new();
    let mut all_ids = Vec::new();
    for i in 0..articles {
        let fam = i % families.len();
        let class = if relevant_idx.contains(&i) {
            Class::Relevant
        } else {
            Class::Irrelevant
        };
        let host = format!("news{}.example", i % 7);
        let url = format!("https://{host}/{}/story-{i}", families[fam].taxon);
        let mobile =
            (i % 3 == 0).then(|| format!("https://m.{host}/{}/story-{i}", families[fam].taxon));
        let seen = window.start() + Duration::minutes((i as i64 * 97) % (72 * 60));
        let title_len = rng.gen_range(5..9);
        let title = synth_text(&mut rng, class, title_len);
        let paragraphs: Vec<String> = (0..rng.gen_range(3..6))
            .map(|_| {
                let len = rng.gen_range(12..20);
                synth_text(&mut rng, class, len)
            })
            .collect();
        let page = html_page(&title, &paragraphs);
        pages
            .store(mobile.as_deref().unwrap_or(&url), page.as_bytes(), None)
            .unwrap();
        let entry = serde_json::json!({
            "url": url,
            "url_mobile": mobile.clone().unwrap_or_default(),
            "title": title,
            "seendate": seen.format("%Y%m%dT%H%M%SZ").to_string(),
            "socialimage": "",
            "domain": host,
            "language": "English",
            "sourcecountry": COUNTRIES[i % COUNTRIES.len()],
        });
        let n_queries = lists[fam].len();
        lists[fam][(i / families.len()) % n_queries].push(entry.clone());
        // the same story found again by the next keyword
        if i % 10 == 0 && n_queries > 1 {
            lists[fam][(i / families.len() + 1) % n_queries].push(entry);
        }
        let id = record_id(&url).unwrap();
        if class == Class::Relevant {
            relevant_ids.insert(id.clone());
        }
        all_ids.push(id);
    }
    for (f, family) in families.iter().enumerate() {
        for (q, query) in build_queries(family, window).into_iter().enumerate() {
            let path = search.path_for(&family.taxon, &query.keyword, &window);
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            let body = serde_json::json!({ "articles": lists[f][q] });
            fs::write(&path, serde_json::to_vec_pretty(&body).unwrap()).unwrap();
        }
    }

    let model = root.join("model.json");
    fs::write(&model, synth_model(seed ^ 0x5eed).to_json()).unwrap();
    let ranges = root.join("ranges.json");
    fs::write(&ranges, include_str!("../../data/ranges.json")).unwrap();
    fs::write(
        root.join("lexicon.tsv"),
        include_str!("../../data/lexicon.tsv"),
    )
    .unwrap();
    fs::write(
        root.join("shifters.tsv"),
        include_str!("../../data/shifters.tsv"),
    )
    .unwrap();
    let config = root.join("config.json");
    let config_body = serde_json::json!({
        "families_path": "families.json",
        "ranges_path": "ranges.json",
        "lexicon_path": "lexicon.tsv",
        "shifters_path": "shifters.tsv",
        "model_path": "model.json",
        "store_dir": "store",
        "fixtures_dir": "fixtures",
        "threshold": 0.5,
        "window": {
            "start": window.start().to_rfc3339(),
            "end": window.end().to_rfc3339(),
        },
    });
    fs::write(&config, serde_json::to_vec_pretty(&config_body).unwrap()).unwrap();
    FixtureSet {
        root: root.to_owned(),
        config,
        fixtures,
        store: root.join("store"),
        model,
        families: families_path,
        ranges,
        window,
        relevant_ids,
        all_ids,
    }
}

/// Seeded relevant-and-scored records spread over a 30-day window, with a
/// sprinkling of irrelevant and unmapped-country records.
pub fn random_records(seed: u64, n: usize) -> (Vec<ArticleRecord>, TimeWindow) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Utc.with_ymd_and_hms(2019, 5, 1, 0, 0, 0).unwrap();
    let window = TimeWindow::new(start, start + Duration::days(30)).unwrap();
    let taxa = ["elephant", "tiger", "pangolin"];
    let countries = [
        ("India", Some("IN")),
        ("Kenya", Some("KE")),
        ("United Kingdom", Some("GB")),
        ("United States", Some("US")),
        ("Vietnam", Some("VN")),
        ("Atlantis", None),
    ];
    let records = (0..n)
        .map(|i| {
            let (raw, iso) = countries[rng.gen_range(0..countries.len())];
            let relevant = rng.gen_bool(0.85);
            let seen: DateTime<Utc> = start + Duration::seconds(rng.gen_range(0..30 * 86_400));
            ArticleRecord {
                id: format!("{:064x}", i + 1),
                taxon: taxa[rng.gen_range(0..taxa.len())].into(),
                url: format!("https://outlet{}.example/a/{i}", rng.gen_range(0..20)),
                fetched_url: format!("https://outlet.example/a/{i}"),
                seen_date: seen,
                source_country_raw: raw.into(),
                source_country_iso: iso.map(Into::into),
                language: "English".into(),
                title: format!("Story {i}"),
                text: "Body text.".into(),
                fetched_at: start,
                relevant: Some(relevant),
                relevance_posterior: Some(if relevant { 0.9 } else { 0.1 }),
                sentiment: relevant.then(|| rng.gen_range(-1.0..1.0)),
            }
        })
        .collect();
    (records, window)
}

pub fn faunawatch(args: &[&str]) -> Output {
    faunawatch_with_input(args, "")
}

pub fn faunawatch_with_input(args: &[&str], input: &str) -> Output {
    use std::io::Write;
    use std::process::Stdio;
    let mut child = Command::new(env!("CARGO_BIN_EXE_faunawatch"))
        .args(args)
        .env("FAUNAWATCH_CLOCK", FIXED_CLOCK)
        .env_remove("RUST_LOG")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary runs");
    // the child may exit without reading
    let _ = child.stdin.take().unwrap().write_all(input.as_bytes());
    child.wait_with_output().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Value of `key=` in a `k=v k=v` summary line.
pub fn summary_field(line: &str, key: &str) -> Option<u64> {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('=')?.parse().ok())
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
