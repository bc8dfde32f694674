//! Managed-node lifecycle: four primary states, six transition states.
//!
//! ```text
//!            configure              activate
//! Unconfigured ----> (Configuring) ----> Inactive ----> (Activating) ----> Active
//!      ^                                  |   ^                              |
//!      |  cleanup                         |   |        deactivate            |
//!      +------------ (CleaningUp) <-------+   +------- (Deactivating) <------+
//!
//! shutdown: Unconfigured | Inactive | Active ----> (ShuttingDown) ----> Finalized
//! any callback failure  ----> (ErrorProcessing) ----> Unconfigured | Finalized
//! ```

use std::fmt;

use thiserror::Error;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum LifecycleState {
    Unconfigured,
    Inactive,
    Active,
    Finalized,
    Configuring,
    CleaningUp,
    ShuttingDown,
    Activating,
    Deactivating,
    ErrorProcessing,
}

impl LifecycleState {
    pub fn is_primary(self) -> bool {
        matches!(
            self,
            LifecycleState::Unconfigured
                | LifecycleState::Inactive
                | LifecycleState::Active
                | LifecycleState::Finalized
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LifecycleState::Unconfigured => "Unconfigured",
            LifecycleState::Inactive => "Inactive",
            LifecycleState::Active => "Active",
            LifecycleState::Finalized => "Finalized",
            LifecycleState::Configuring => "Configuring",
            LifecycleState::CleaningUp => "CleaningUp",
            LifecycleState::ShuttingDown => "ShuttingDown",
            LifecycleState::Activating => "Activating",
            LifecycleState::Deactivating => "Deactivating",
            LifecycleState::ErrorProcessing => "ErrorProcessing",
        }
    }
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum TransitionKind {
    Configure,
    Activate,
    Deactivate,
    Cleanup,
    Shutdown,
}

impl TransitionKind {
    pub const ALL: [TransitionKind; 5] = [
        TransitionKind::Configure,
        TransitionKind::Activate,
        TransitionKind::Deactivate,
        TransitionKind::Cleanup,
        TransitionKind::Shutdown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TransitionKind::Configure => "configure",
            TransitionKind::Activate => "activate",
            TransitionKind::Deactivate => "deactivate",
            TransitionKind::Cleanup => "cleanup",
            TransitionKind::Shutdown => "shutdown",
        }
    }

    /// The transition state entered while this request runs.
    pub fn transition_state(self) -> LifecycleState {
        match self {
            TransitionKind::Configure => LifecycleState::Configuring,
            TransitionKind::Activate => LifecycleState::Activating,
            TransitionKind::Deactivate => LifecycleState::Deactivating,
            TransitionKind::Cleanup => LifecycleState::CleaningUp,
            TransitionKind::Shutdown => LifecycleState::ShuttingDown,
        }
    }

    /// The primary state reached when the callback succeeds.
    pub fn success_state(self) -> LifecycleState {
        match self {
            TransitionKind::Configure => LifecycleState::Inactive,
            TransitionKind::Activate => LifecycleState::Active,
            TransitionKind::Deactivate => LifecycleState::Inactive,
            TransitionKind::Cleanup => LifecycleState::Unconfigured,
            TransitionKind::Shutdown => LifecycleState::Finalized,
        }
    }

    /// Source states from which this request is legal.
    pub fn legal_from(self, state: LifecycleState) -> bool {
        match self {
            TransitionKind::Configure => state == LifecycleState::Unconfigured,
            TransitionKind::Activate => state == LifecycleState::Inactive,
            TransitionKind::Deactivate => state == LifecycleState::Active,
            TransitionKind::Cleanup => state == LifecycleState::Inactive,
            TransitionKind::Shutdown => matches!(
                state,
                LifecycleState::Unconfigured | LifecycleState::Inactive | LifecycleState::Active
            ),
        }
    }
}

impl fmt::Display for TransitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Result reported by a node's transition callback.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum CallbackOutcome {
    #[default]
    Success,
    Failure {
        recoverable: bool,
    },
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum LifecycleError {
    #[error("invalid-transition: {kind} from {from}")]
    InvalidTransition {
        from: LifecycleState,
        kind: TransitionKind,
    },
    #[error("terminal: node is Finalized")]
    Terminal,
    #[error("transition already in progress")]
    InProgress,
    #[error("unknown node {0}")]
    UnknownNode(String),
}

/// How a begun transition resolved, with the states walked through so the
/// caller can record each hop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Resolution {
    Completed(LifecycleState),
    /// Callback failed: ErrorProcessing was entered, then left for `ended_in`
    /// (Unconfigured when recoverable, Finalized otherwise).
    Errored {
        ended_in: LifecycleState,
    },
}

impl Resolution {
    pub fn final_state(&self) -> LifecycleState {
        match self {
            Resolution::Completed(s) => *s,
            Resolution::Errored { ended_in } => *ended_in,
        }
    }
}

/// Pure per-node state machine. Serialization of concurrent requests is the
/// caller's job; `begin` from a transition state reports `InProgress`.
#[derive(Clone, Debug)]
pub struct LifecycleMachine {
    state: LifecycleState,
}

impl LifecycleMachine {
    pub fn new() -> Self {
        LifecycleMachine {
            state: LifecycleState::Unconfigured,
        }
    }

    pub fn state(&self) -> LifecycleState {
        self.state
    }

    /// Enters the transition state for `kind` if the edge is legal.
    pub fn begin(&mut self, kind: TransitionKind) -> Result<LifecycleState, LifecycleError> {
        if self.state == LifecycleState::Finalized {
            return Err(LifecycleError::Terminal);
        }
        if !self.state.is_primary() {
            return Err(LifecycleError::InProgress);
        }
        if !kind.legal_from(self.state) {
            return Err(LifecycleError::InvalidTransition {
                from: self.state,
                kind,
            });
        }
        self.state = kind.transition_state();
        Ok(self.state)
    }

    /// Applies the callback outcome for the in-flight `kind`.
    pub fn resolve(&mut self, kind: TransitionKind, outcome: CallbackOutcome) -> Resolution {
        debug_assert_eq!(self.state, kind.transition_state(), "resolve out of order");
        match outcome {
            CallbackOutcome::Success => {
                self.state = kind.success_state();
                Resolution::Completed(self.state)
            }
            CallbackOutcome::Failure { recoverable } => {
                self.state = if recoverable {
                    LifecycleState::Unconfigured
                } else {
                    LifecycleState::Finalized
                };
                Resolution::Errored {
                    ended_in: self.state,
                }
            }
        }
    }

    /// Marks a crashed node terminal without running callbacks.
    pub fn force_finalize(&mut self) -> LifecycleState {
        self.state = LifecycleState::Finalized;
        self.state
    }
}

impl Default for LifecycleMachine {
    fn default() -> Self {
        Self::new()
    }
}
