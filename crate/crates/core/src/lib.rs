pub mod data_eval;
pub mod geometry;
pub mod graph_blocks;
pub mod model;
pub mod motion_attention;
pub mod numerics;
