pub mod array;
pub mod bench;
pub mod cli;
pub mod engine;
pub mod ft;
pub mod power;
pub mod protocol;
pub mod validation;
