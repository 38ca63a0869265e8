pub mod cli;
pub mod corpus;
pub mod eval;
pub mod grpo;
pub mod policy;
pub mod rewards;
pub mod sandbox;
