pub mod evaluate;
pub mod generate;
pub mod inspect;
pub mod synth;
pub mod train;
pub mod vocab;
