//! Command line companion for the `nerval` library: configuration and
//! corpus file formats, prompt template files, the chat-completion
//! transport with record/replay fixtures, batch orchestration, and
//! report rendering.

#![forbid(unsafe_code)]

pub mod cli;
pub mod config;
pub mod corpus_io;
pub mod provider;
pub mod reports;
pub mod runner;
pub mod templates;
