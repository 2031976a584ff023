//! Behavior trees with memory-less ticks: every tick starts again at the
//! root, so long-running leaves report `Running` and judge their own
//! completion from the world.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TickStatus {
    Success,
    Failure,
    Running,
}

pub type ActionFn<W> = Box<dyn FnMut(&mut W) -> TickStatus + Send>;
pub type ConditionFn<W> = Box<dyn Fn(&W) -> bool + Send>;

pub enum BtNode<W> {
    Sequence(Vec<BtNode<W>>),
    Selector(Vec<BtNode<W>>),
    /// Ticks every child; Failure if any fails, Success once all succeed.
    Parallel(Vec<BtNode<W>>),
    Action { name: String, run: ActionFn<W> },
    Condition { name: String, check: ConditionFn<W> },
    /// Succeeds after its child has succeeded `n` times.
    Repeat { n: usize, done: usize, child: Box<BtNode<W>> },
    /// Fails after its child has failed `n` times.
    Retry { n: usize, failed: usize, child: Box<BtNode<W>> },
}

impl<W> fmt::Debug for BtNode<W> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BtNode::Sequence(c) => f.debug_tuple("Sequence").field(c).finish(),
            BtNode::Selector(c) => f.debug_tuple("Selector").field(c).finish(),
            BtNode::Parallel(c) => f.debug_tuple("Parallel").field(c).finish(),
            BtNode::Action { name, .. } => write!(f, "Action({name})"),
            BtNode::Condition { name, .. } => write!(f, "Condition({name})"),
            BtNode::Repeat { n, child, .. } => f.debug_tuple("Repeat").field(n).field(child).finish(),
            BtNode::Retry { n, child, .. } => f.debug_tuple("Retry").field(n).field(child).finish(),
        }
    }
}

impl<W> BtNode<W> {
    pub fn action(name: impl Into<String>, run: impl FnMut(&mut W) -> TickStatus + Send + 'static) -> Self {
        BtNode::Action { name: name.into(), run: Box::new(run) }
    }

    pub fn condition(name: impl Into<String>, check: impl Fn(&W) -> bool + Send + 'static) -> Self {
        BtNode::Condition { name: name.into(), check: Box::new(check) }
    }

    pub fn repeat(n: usize, child: BtNode<W>) -> Self {
        BtNode::Repeat { n, done: 0, child: Box::new(child) }
    }

    pub fn retry(n: usize, child: BtNode<W>) -> Self {
        BtNode::Retry { n, failed: 0, child: Box::new(child) }
    }

    pub fn tick(&mut self, world: &mut W) -> TickStatus {
        self.tick_traced(world, &mut |_, _| {})
    }

    /// Ticks the tree, reporting every visited leaf and its status.
    pub fn tick_traced(&mut self, world: &mut W, trace: &mut dyn FnMut(&str, TickStatus)) -> TickStatus {
        match self {
            BtNode::Sequence(children) => {
                for c in children {
                    let s = c.tick_traced(world, trace);
                    if s != TickStatus::Success {
                        return s;
                    }
                }
                TickStatus::Success
            }
            BtNode::Selector(children) => {
                for c in children {
                    let s = c.tick_traced(world, trace);
                    if s != TickStatus::Failure {
                        return s;
                    }
                }
                TickStatus::Failure
            }
            BtNode::Parallel(children) => {
                let mut all = true;
                for c in children {
                    match c.tick_traced(world, trace) {
                        TickStatus::Failure => return TickStatus::Failure,
                        TickStatus::Running => all = false,
                        TickStatus::Success => {}
                    }
                }
                if all {
                    TickStatus::Success
                } else {
                    TickStatus::Running
                }
            }
            BtNode::Action { name, run } => {
                let s = run(world);
                trace(name, s);
                s
            }
            BtNode::Condition { name, check } => {
                let s = if check(world) { TickStatus::Success } else { TickStatus::Failure };
                trace(name, s);
                s
            }
            BtNode::Repeat { n, done, child } => match child.tick_traced(world, trace) {
                TickStatus::Success => {
                    *done += 1;
                    if *done >= *n {
                        *done = 0;
                        TickStatus::Success
                    } else {
                        TickStatus::Running
                    }
                }
                TickStatus::Failure => {
                    *done = 0;
                    TickStatus::Failure
                }
                TickStatus::Running => TickStatus::Running,
            },
            BtNode::Retry { n, failed, child } => match child.tick_traced(world, trace) {
                TickStatus::Failure => {
                    *failed += 1;
                    if *failed >= *n {
                        *failed = 0;
                        TickStatus::Failure
                    } else {
                        TickStatus::Running
                    }
                }
                TickStatus::Success => {
                    *failed = 0;
                    TickStatus::Success
                }
                TickStatus::Running => TickStatus::Running,
            },
        }
    }

    /// Composite and decorator arity rules.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            BtNode::Sequence(c) | BtNode::Selector(c) | BtNode::Parallel(c) => {
                if c.is_empty() {
                    return Err("composite node without children".into());
                }
                c.iter().try_for_each(|n| n.validate())
            }
            BtNode::Repeat { n, child, .. } | BtNode::Retry { n, child, .. } => {
                if *n == 0 {
                    return Err("decorator count must be positive".into());
                }
                child.validate()
            }
            BtNode::Action { .. } | BtNode::Condition { .. } => Ok(()),
        }
    }
}
