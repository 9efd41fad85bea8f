pub mod bench;
pub mod clustering;
pub mod dataset;
pub mod envgen;
pub mod error;
pub mod landscape;
pub mod linalg;
pub mod objective;
pub mod oracle;
pub mod ope;
pub mod par;
pub mod policy;
pub mod pwll;
pub mod reward_model;
pub mod trainer;
