//! Reference binary MLP: forward pass, batch-norm folding and training.

mod batchnorm;
mod binary;
mod train;

pub use batchnorm::{fold_batch_norm, BatchNormParams, FoldedBn, DEFAULT_BN_CAP};
pub use binary::{
    argmax_first, binarize, layer_forward, model_forward, BinaryLayer, BinaryModel, BinaryVector,
    ModelShape,
};
pub use train::{
    train, Activation, Binarization, Gradients, HiddenGrad, HiddenLayer, Optimizer, OutputLayer, ShadowModel,
    TrainConfig, TrainReport, TrainedModel, Trainer,
};
