//! Multiple-shooting prediction-error training, evaluation and the model
//! file format.

mod evaluate;
mod identified;
mod loss;
mod scaler;
mod train;

pub use evaluate::{
    evaluate, evaluate_dataset, evaluate_split_set, nrms, EvalMode, EvalReport, SplitNrms,
    StatePredictor, WhOracle,
};
pub use identified::{IdentifiedModel, MODEL_FORMAT, MODEL_FORMAT_VERSION};
pub use loss::{
    batch_loss, batch_loss_grad, encoder_loss, parameter_norm_sq, section_loss, SectionLoss,
    ENCODER_PREFIX, MODEL_PREFIX,
};
pub use scaler::Scaler;
pub use train::{train, train_with_observer, EpochRecord, Observer, TrainConfig, TrainOutcome, TrainReport};
