pub mod agents;
pub mod backend;
pub mod cli;
pub mod corpus;
pub mod demobuild;
pub mod evalkit;
pub mod parseout;
pub mod prompting;
pub mod wiki;
