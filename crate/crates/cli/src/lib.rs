pub mod cfgfile;
pub mod report;
pub mod runner;
pub mod svg;
pub mod synth;
