//! Command-line front end: CSV ingestion, subcommands and reports.

pub mod args;
pub mod commands;
pub mod ingest;
pub mod report;
