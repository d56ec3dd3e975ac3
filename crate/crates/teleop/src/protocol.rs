//! Wire messages.
//!
//! Every message is one JSON text frame. Node ids are 1-based, as in
//! scenario files. `points` lists every kinematic point and `edges` index
//! into it from 0.
//!
//! Server to client:
//!
//! ```json
//! {"type":"state","t":1.2,"points":[[0.0,0.0],[1.0,0.0]],"edges":[[0,1]],
//!  "plans":{"1":[[0.0,0.0],[0.1,0.0]],"2":[[0.0,0.0],[0.1,0.0]]},
//!  "targets":[{"center":[0.37,2.0],"half_width":0.1}]}
//! {"type":"error","message":"command for node 2, this session steers node 3"}
//! ```
//!
//! Client to server:
//!
//! ```json
//! {"type":"command","node":3,"v":[-0.1,0.0]}
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use truss_sim::scenario::Target;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    State(StateMessage),
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub t: f64,
    pub points: Vec<Vec<f64>>,
    pub edges: Vec<[usize; 2]>,
    /// Each node's copy of the plan, one velocity per point.
    pub plans: BTreeMap<String, Vec<Vec<f64>>>,
    pub targets: Vec<Target>,
}

impl StateMessage {
    /// Node `node`'s (1-based) copy of the velocity of point `p`.
    pub fn plan_velocity(&self, node: usize, p: usize) -> Option<&[f64]> {
        self.plans.get(&node.to_string()).and_then(|v| v.get(p)).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientMessage {
    Command { node: usize, v: Vec<f64> },
}

pub fn encode(msg: &ServerMessage) -> String {
    serde_json::to_string(msg).expect("server messages serialize")
}

pub fn decode_client(text: &str) -> Result<ClientMessage, serde_json::Error> {
    serde_json::from_str(text)
}

pub(crate) fn split_points(flat: &[f64], d: usize) -> Vec<Vec<f64>> {
    flat.chunks(d).map(<[f64]>::to_vec).collect()
}
