//! Comparison schemes: analog network coding (amplify-and-forward with
//! linear decoding) and the compress-then-route separation estimate.

pub mod anc;
pub mod dct;
pub mod flow;
pub mod separation;
