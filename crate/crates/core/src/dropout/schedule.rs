use serde::{Deserialize, Serialize};

use super::DropoutError;

/// Annealing state, advanced once per epoch by the training loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub current_epoch: u32,
    pub total_epochs: u32,
    pub activation_epoch: u32,
}

impl ScheduleState {
    pub fn new(current_epoch: u32, total_epochs: u32, activation_epoch: u32) -> Self {
        Self { current_epoch, total_epochs, activation_epoch }
    }

    pub fn lambda(&self) -> Result<f64, DropoutError> {
        schedule_lambda(self)
    }
}

/// Zero before the activation epoch, rising linearly to one at the final
/// epoch.
pub fn schedule_lambda(state: &ScheduleState) -> Result<f64, DropoutError> {
    let ScheduleState { current_epoch, total_epochs, activation_epoch } = *state;
    if activation_epoch >= total_epochs {
        return Err(DropoutError::Schedule { activation: activation_epoch, total: total_epochs });
    }
    if current_epoch <= activation_epoch {
        return Ok(0.0);
    }
    let span = (total_epochs - activation_epoch) as f64;
    Ok(((current_epoch - activation_epoch) as f64 / span).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_points() {
        assert_eq!(schedule_lambda(&ScheduleState::new(5, 100, 10)).unwrap(), 0.0);
        assert_eq!(schedule_lambda(&ScheduleState::new(100, 100, 10)).unwrap(), 1.0);
        assert_eq!(schedule_lambda(&ScheduleState::new(55, 100, 10)).unwrap(), 0.5);
    }

    #[test]
    fn bad_activation() {
        assert!(schedule_lambda(&ScheduleState::new(1, 10, 10)).is_err());
    }
}
