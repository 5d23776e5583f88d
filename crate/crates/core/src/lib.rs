pub mod acceptability;
pub mod cartography;
pub mod cli;
pub mod corpus;
pub mod curriculum;
pub mod evaluation;
pub mod io;
pub mod plot;
pub mod pseudo_label;
pub mod synthetic;
pub mod trainer;
