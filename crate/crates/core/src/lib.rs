//! Task-incremental learning with a frozen backbone and classifier shared
//! across tasks and one small trainable adjustment network per task.

pub mod tensorcore;
pub mod modelzoo;
pub mod datasets;
pub mod tilengine;
pub mod harness;
