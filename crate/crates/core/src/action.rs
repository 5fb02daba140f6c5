use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete CAV decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Action {
    Remain = 0,
    Left = 1,
    Right = 2,
    Accelerate = 3,
    Decelerate = 4,
}

pub const N_ACTIONS: usize = 5;

impl Action {
    pub const ALL: [Action; N_ACTIONS] = [Action::Remain, Action::Left, Action::Right, Action::Accelerate, Action::Decelerate];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or_else(|| Error::Domain(format!("action index {i} outside 0..5")))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Remain => "remain",
            Action::Left => "left",
            Action::Right => "right",
            Action::Accelerate => "accelerate",
            Action::Decelerate => "decelerate",
        }
    }

    pub fn is_lane_change(self) -> bool {
        matches!(self, Action::Left | Action::Right)
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a as u8
    }
}

impl TryFrom<u8> for Action {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Self::from_index(usize::from(v))
    }
}
