use crate::tree::{Census, ModelTree};

/// Counts every mate as a constraint and the actuated ones separately.
pub fn validate_machine(tree: &ModelTree) -> Census {
    Census { total: tree.mates.len(), actuated: tree.mates.iter().filter(|m| m.actuated).count() }
}
