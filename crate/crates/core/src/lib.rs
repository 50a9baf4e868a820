//! Wildlife-trade news monitoring: discover articles through the GDELT
//! document index, fetch and clean their text, filter them with a naive
//! Bayes relevance model, score their sentiment, and aggregate the results
//! by day and by country.

pub mod analytics;
pub mod domain;
pub mod fetcher;
pub mod gdelt;
pub mod relevance;
pub mod sentiment;
pub mod store;
pub mod transport;

pub mod cli;
pub mod pipeline;
