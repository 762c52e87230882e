//! Configuration, experiment orchestration and result files.

pub mod campaign;
pub mod commands;
pub mod config;
pub mod io;
pub mod selftest;

pub use campaign::{
    search_campaign, write_json, Campaign, CampaignSpec, CampaignSummary, SearchMethod,
    SearchResult,
};
pub use config::{AnyModel, RunConfig, Setup};
