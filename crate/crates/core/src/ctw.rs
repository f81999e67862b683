//! Exponentially weighted aggregation over all prunings of a tree.
//!
//! Each node keeps `log w_b = −η L_b` and `log w̄_b`, with
//! `w̄_b = ½ w_b + ½ w̄_{b0} w̄_{b1}` at internal nodes and `w̄_b = w_b` at
//! leaves. A single upward pass after each sample keeps these exact, and a
//! single upward pass at prediction time yields the mixture of the forecasts
//! of every pruning weighted by `2^{−‖T‖} e^{−η L(T)}`.

use std::f64::consts::LN_2;

use crate::error::{AmfError, Result};
use crate::forecasters::{loss, Prediction};
use crate::mondrian::VirtualSplit;
use crate::tree_store::{MondrianTree, NodeId};

/// `log(e^a + e^b)` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Mixing coefficient `½ w_b / w̄_b` of a node's own forecast.
fn own_share(tree: &MondrianTree, id: NodeId) -> f64 {
    let n = tree.node(id);
    (0.5 * (n.log_weight - n.log_avg_weight).exp()).clamp(0.0, 1.0)
}

/// Weight and forecast updates along the path from `leaf` to the root.
///
/// Returns the number of nodes visited. Nodes off the path are untouched.
pub fn update_weights_upward(tree: &mut MondrianTree, leaf: NodeId, y: f64, eta: f64) -> Result<usize> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(AmfError::InvalidParameter { name: "eta", reason: format!("must be > 0, got {eta}") });
    }
    if tree.get(leaf).is_none() {
        return Err(AmfError::DetachedNode(leaf));
    }
    let task = tree.task();
    task.check_label(y)?;
    let kind = task.loss_kind();
    let mut visited = 0;
    let mut cur = Some(leaf);
    while let Some(id) = cur {
        visited += 1;
        let pred = tree.node(id).stats.predict();
        let l = loss(kind, &pred, y)?;
        let avg = tree.node(id).branch.as_ref().map(|b| tree.node(b.left).log_avg_weight + tree.node(b.right).log_avg_weight);
        let node = tree.node_mut(id);
        node.log_weight -= eta * l;
        node.log_avg_weight = match avg {
            None => node.log_weight,
            Some(children) => log_add_exp(node.log_weight - LN_2, children - LN_2),
        };
        node.stats.update(y)?;
        cur = node.parent;
    }
    Ok(visited)
}

/// Aggregated prediction of a tree at `x`.
///
/// Without a virtual split the recursion starts at the leaf containing `x`.
/// With one, it starts from a virtual fresh leaf forecasting `prior`, passes
/// through `chain` virtual copies of the host, then continues from the host's
/// parent using stored values only.
pub fn predict_aggregated(
    tree: &MondrianTree,
    x: &[f64],
    virtual_split: Option<&VirtualSplit>,
    prior: &Prediction,
) -> Prediction {
    let (mut acc, mut cur) = match virtual_split {
        Some(v) => {
            let own = tree.node(v.host).stats.predict();
            let alpha = own_share(tree, v.host);
            let mut acc = prior.clone();
            for _ in 0..v.chain {
                acc.blend(alpha, &own);
            }
            (acc, tree.node(v.host).parent)
        }
        None => {
            let leaf = tree.leaf_containing(x);
            (tree.node(leaf).stats.predict(), tree.node(leaf).parent)
        }
    };
    while let Some(id) = cur {
        acc.blend(own_share(tree, id), &tree.node(id).stats.predict());
        cur = tree.node(id).parent;
    }
    acc
}

/// Mixture over prunings of the depth of the leaf containing `x`.
pub fn weighted_depth(tree: &MondrianTree, x: &[f64]) -> f64 {
    let path = tree.path_to(x);
    let mut depth_acc = (path.len() - 1) as f64;
    for (depth, &id) in path.iter().enumerate().rev().skip(1) {
        let alpha = own_share(tree, id);
        depth_acc = alpha * depth as f64 + (1.0 - alpha) * depth_acc;
    }
    depth_acc
}
