use serde::{Deserialize, Serialize};

/// Properties of a learning task that decide how a diffusion policy is
/// trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    /// Actions influence future states over multiple decision steps.
    pub is_markov: bool,
    /// Target actions are available for the training states.
    pub has_labels: bool,
    /// Objective and constraint expressions are known in closed form.
    pub has_model: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LearningMethod {
    Supervised,
    ModelBasedUnsupervised,
    ModelFreeUnsupervised,
    ReinforcementLearning,
}

pub fn select_method(task: &TaskDescriptor) -> LearningMethod {
    if task.is_markov {
        LearningMethod::ReinforcementLearning
    } else if task.has_labels {
        LearningMethod::Supervised
    } else if task.has_model {
        LearningMethod::ModelBasedUnsupervised
    } else {
        LearningMethod::ModelFreeUnsupervised
    }
}
