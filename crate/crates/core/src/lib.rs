pub mod bench;
pub mod cli;
pub mod compile;
pub mod learn;
pub mod logic;
pub mod sfa;
