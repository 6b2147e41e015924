use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Eq-1 style SINR evaluation is singular when a transmitter and the
    /// receiver share a position.
    #[error("co-located transceiver: transmitter {transmitter} and receiver {receiver} are at distance zero")]
    CoLocatedTransceiver { transmitter: u32, receiver: u32 },

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("schedule too large: {bits} bits exceeds the desk-scale guard of {cap} bits")]
    ScheduleTooLarge { bits: u64, cap: u64 },

    #[error("schedule shape error: {0}")]
    ScheduleShape(String),

    /// Local leader election ended with a contested box, which a certified
    /// selector must not allow.
    #[error("selector deficiency: box ({i},{j}) still has {active} active stations after the election loop")]
    ContestedBox { i: i32, j: i32, active: usize },

    /// Local learning ended with unconfirmed stations.
    #[error("selector deficiency: stations {0:?} were never confirmed by their box leader")]
    UnconfirmedStations(Vec<u32>),

    #[error("neighborhood learning: sender {sender} for direction ({d1},{d2}) has no reachable receiver")]
    MissingReceiver { sender: u32, d1: i32, d2: i32 },

    #[error("backbone property violated: {0}")]
    BackboneProperty(String),

    #[error("leader election exceeded the 3D+1 phase budget (D={d}, ran {phases} phases); trailing state trace: {trace_tail}")]
    ElectionOverrun { d: usize, phases: usize, trace_tail: String },

    #[error("leader election invariant violated: {0}")]
    ElectionInvariant(String),

    #[error("broadcast tree invariant violated: {0}")]
    TreeInvariant(String),

    #[error("multi-broadcast incomplete: {0}")]
    BroadcastIncomplete(String),

    #[error("network generation infeasible after {attempts} attempts: {detail}")]
    GenerationInfeasible { attempts: usize, detail: String },

    #[error("scenario stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
