pub mod backend;
pub mod experiment;
pub mod fixtures;
pub mod io;
pub mod knowledge;
pub mod prompt;
pub mod psychometrics;
pub mod report;
