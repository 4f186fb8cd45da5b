//! Joint training and inference for Locate&Gen.

mod decode;
mod eval;
mod loss;
mod polish;
mod sample;
mod train;

pub use decode::{beam_search, greedy_decode, BeamHypothesis, ModelScorer, StepScorer};
pub use eval::{fit_report, gold_log_probs, predict_positions, FitReport};
pub use loss::{dataset_loss, joint_loss, joint_loss_grads, JointLoss};
pub use polish::{splice, Candidate, Decoding, PolishResult, Polisher};
pub use sample::SimileSample;
pub use train::{pretrain_encoder, train, LossRecord, TrainConfig, TrainReport};
