//! Maintenance node: executes parameter updates and on-line node replacement
//! from maintenance commands routed by the TT&C node.
//!
//! Command text forms (UTF-8 on the maintenance topic):
//!   `param <node> <key> <type>:<value>`      e.g. `param payload1 poll_delay_ms i:50`
//!   `replace <node> <behavior_id> <build_delay_us>`

use crate::lifecycle::CallbackOutcome;
use crate::node::{Behavior, NodeId, ParamValue, SubTag};
use crate::sim::Cx;

use super::TOPIC_MAINTENANCE;

const TAG_MAINTENANCE: SubTag = 1;

#[derive(Default)]
pub struct MaintenanceBehavior;

impl MaintenanceBehavior {
    pub fn new() -> Self {
        MaintenanceBehavior
    }

    fn handle_command(&mut self, cx: &mut Cx<'_>, text: &str) {
        let parts: Vec<&str> = text.split_whitespace().collect();
        match parts.as_slice() {
            ["param", node, key, value] => {
                let Some(value) = ParamValue::parse(value) else {
                    cx.log(format!("maintenance param rejected: bad value {value}"));
                    return;
                };
                let target = NodeId::from(*node);
                match cx.set_parameter(&target, key, value) {
                    Ok(previous) => cx.log(format!(
                        "maintenance param applied node={node} key={key} previous={previous}"
                    )),
                    Err(err) => cx.log(format!(
                        "maintenance param failed node={node} key={key} error={err}"
                    )),
                }
            }
            ["replace", node, behavior_id, build_delay] => {
                let Ok(build_delay_us) = build_delay.parse::<u64>() else {
                    cx.log(format!(
                        "maintenance replace rejected: bad build delay {build_delay}"
                    ));
                    return;
                };
                let target = NodeId::from(*node);
                match cx.replace_node(&target, behavior_id, build_delay_us) {
                    Ok(()) => cx.log(format!(
                        "maintenance replace started node={node} behavior={behavior_id} build_delay_us={build_delay_us}"
                    )),
                    Err(err) => cx.log(format!("maintenance replace failed error={err}")),
                }
            }
            _ => cx.log(format!("maintenance command unrecognized: {text}")),
        }
    }
}

impl Behavior for MaintenanceBehavior {
    fn kind(&self) -> &'static str {
        "maintenance"
    }

    fn on_configure(&mut self, cx: &mut Cx<'_>) -> CallbackOutcome {
        cx.subscribe(TOPIC_MAINTENANCE, TAG_MAINTENANCE);
        CallbackOutcome::Success
    }

    fn on_envelope(&mut self, cx: &mut Cx<'_>, tag: SubTag, env: &crate::bus::Envelope) {
        if tag != TAG_MAINTENANCE || !cx.is_active() {
            return;
        }
        match std::str::from_utf8(&env.payload) {
            Ok(text) => {
                let text = text.to_owned();
                self.handle_command(cx, &text);
            }
            Err(_) => cx.log("maintenance command rejected: not utf-8"),
        }
    }
}
