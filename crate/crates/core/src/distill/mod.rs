//! Laboratory teacher, multimodal student, and the distillation objective
//! that ties them together: a robust task loss, layer-wise feature
//! matching, and agreement of batch-level prediction distributions.

mod config;
mod loss;
mod student;
mod teacher;
mod train;

pub use config::{DistillWeights, StudentConfig, StudentInputs, TeacherConfig};
pub use loss::{
    composite_loss, composite_value, feature_distill_loss, feature_distill_value, huber_loss,
    kl_divergence, kl_output_loss, smooth_l1,
};
pub use student::StudentModel;
pub use teacher::{TeacherModel, TeacherTargets};
pub use train::{teacher_targets, train_student, train_teacher, StudentData, TeacherData};

use crate::numerics::{Tensor, Var};
use crate::Result;

/// Prediction (`batch x 1`) and the mean-pooled output of every encoder
/// layer (`batch x model_dim` each).
#[derive(Clone, Debug)]
pub struct Forward {
    pub pred: Var,
    pub features: alloc::vec::Vec<Var>,
}

/// Runs `f` on consecutive row chunks of at most 256.
fn for_chunks(rows: &Tensor, mut f: impl FnMut(Tensor) -> Result<()>) -> Result<()> {
    let n = rows.rows();
    let idx: alloc::vec::Vec<usize> = (0..n).collect();
    for c in idx.chunks(256) {
        f(rows.gather_rows(c))?;
    }
    Ok(())
}
