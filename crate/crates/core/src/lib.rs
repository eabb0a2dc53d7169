pub mod apps;
pub mod dsp;
pub mod frames;
pub mod grouping;
pub mod locate;
pub mod simulate;
pub mod store;
