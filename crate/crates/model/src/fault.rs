//! Backward-pass fault injection for gradient-check sensitivity tests.
//!
//! A fault scales every gradient produced by one primitive's backward on the
//! current thread. Nothing is injected unless a test installs a fault.

use std::cell::Cell;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardOp {
    Matmul,
    Linear,
    Softmax,
    LayerNorm,
    Gelu,
    MeanPool,
    Attention,
    WeightedCe,
}

impl BackwardOp {
    pub const ALL: [BackwardOp; 8] = [
        BackwardOp::Matmul,
        BackwardOp::Linear,
        BackwardOp::Softmax,
        BackwardOp::LayerNorm,
        BackwardOp::Gelu,
        BackwardOp::MeanPool,
        BackwardOp::Attention,
        BackwardOp::WeightedCe,
    ];
}

thread_local! {
    static ACTIVE: Cell<Option<(BackwardOp, f64)>> = const { Cell::new(None) };
}

/// Removes the fault when dropped.
pub struct FaultGuard(());

impl Drop for FaultGuard {
    fn drop(&mut self) {
        ACTIVE.with(|a| a.set(None));
    }
}

pub fn inject(op: BackwardOp, factor: f64) -> FaultGuard {
    ACTIVE.with(|a| a.set(Some((op, factor))));
    FaultGuard(())
}

pub(crate) fn apply(op: BackwardOp, grad: &mut Tensor) {
    if let Some((target, factor)) = ACTIVE.with(Cell::get) {
        if target == op {
            grad.scale(factor);
        }
    }
}
