pub mod judge;
pub mod lint;
pub mod pipeline;
pub mod reward;
pub mod score;
