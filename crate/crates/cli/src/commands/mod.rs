pub mod dataset;
pub mod eval;
pub mod gen_data;
pub mod pose;
pub mod train;
