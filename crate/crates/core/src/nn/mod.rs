//! Minimal trainable network kernel in double precision.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod gradcheck;
pub mod head;
pub mod lstm;
pub mod tensor;

pub use adam::{adam_update, Adam, AdamConfig};
pub use checkpoint::Container;
pub use conv::{ConvBlock, ConvSpec, MapShape};
pub use dense::{fully_connected_forward, Dense, Mlp};
pub use dropout::Dropout;
pub use gradcheck::{finite_difference_check, GradCheckOptions, GradCheckReport};
pub use head::sigmoid_head;
pub use lstm::{lstm_cell_step, lstm_stack_forward, LstmCellParams, LstmStack, LstmStackConfig};
pub use tensor::{Param, Parameterized, Tensor};
