//! AVL-balanced search tree over temporal keys with trainable feature values.
//!
//! Keys are real-valued times in `[0, L-1]`; each node carries a feature
//! tensor of a fixed shape. Queries descend from the root keeping running
//! lower/upper bound candidates, so one pass retrieves both interpolation
//! bounds in at most `height + 1` node visits. Midpoint insertion refines an
//! interval by placing a new node halfway between two adjacent keys, with its
//! value initialized by interpolation and trained independently afterwards.

use rand::Rng;
use thiserror::Error;

use crate::autodiff::Tensor;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("tree is empty")]
    Empty,
    #[error("node count must be at least 2 and at most the sequence length, got N={n}, L={len}")]
    BadNodeCount { n: usize, len: usize },
    #[error("key {0} already present")]
    DuplicateKey(f64),
    #[error("value shape {got:?} does not match grid value shape {want:?}")]
    ValueShape { got: Vec<usize>, want: Vec<usize> },
    #[error("keys {lower} and {upper} are not adjacent in the tree")]
    NotAdjacent { lower: f64, upper: f64 },
    #[error("key {0} is not present")]
    MissingKey(f64),
}

/// Outcome of [`TreeGrid::validate`]. Reports the first violated invariant
/// instead of failing, so corrupted trees can be diagnosed.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationReport {
    Pass,
    BstOrderViolation { key: f64 },
    HeightMismatch { key: f64, stored: i32, actual: i32 },
    ImbalancedNode { key: f64, balance: i32 },
    NodeCountMismatch { stored: usize, actual: usize },
}

impl ValidationReport {
    pub fn is_pass(&self) -> bool {
        matches!(self, ValidationReport::Pass)
    }
}

/// Tree node: temporal key, trainable feature value, cached height, children.
#[derive(Debug, Clone)]
pub struct FeatureNode {
    key: f64,
    value: Tensor,
    height: i32,
    left: Option<Box<FeatureNode>>,
    right: Option<Box<FeatureNode>>,
}

impl FeatureNode {
    fn new(key: f64, value: Tensor) -> Self {
        FeatureNode {
            key,
            value,
            height: 0,
            left: None,
            right: None,
        }
    }
}

/// One interpolation bound: key and a reference to the node's value.
#[derive(Debug, Clone, Copy)]
pub struct Bound<'a> {
    pub key: f64,
    pub value: &'a Tensor,
}

/// Lower/upper interpolation bounds for a query time. On an exact key hit or
/// an out-of-range (clamped) query both bounds refer to the same node.
#[derive(Debug, Clone, Copy)]
pub struct BoundPair<'a> {
    pub lower: Bound<'a>,
    pub upper: Bound<'a>,
}

impl BoundPair<'_> {
    pub fn is_degenerate(&self) -> bool {
        self.lower.key == self.upper.key
    }
}

/// Pre-order snapshot row, used for structural assertions and serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSnapshot {
    pub key: f64,
    pub height: i32,
    pub left: Option<f64>,
    pub right: Option<f64>,
}

/// The tree-structured feature grid.
#[derive(Debug, Clone)]
pub struct TreeGrid {
    root: Option<Box<FeatureNode>>,
    node_count: usize,
    value_shape: Vec<usize>,
    key_domain: (f64, f64),
}

fn height(node: &Option<Box<FeatureNode>>) -> i32 {
    // Leaves have height 0, so an empty subtree counts as -1.
    node.as_ref().map_or(-1, |n| n.height)
}

fn update_height(node: &mut Box<FeatureNode>) {
    node.height = 1 + height(&node.left).max(height(&node.right));
}

fn balance_factor(node: &FeatureNode) -> i32 {
    height(&node.left) - height(&node.right)
}

fn rotate_right(mut y: Box<FeatureNode>) -> Box<FeatureNode> {
    let mut x = y.left.take().expect("right rotation needs a left child");
    y.left = x.right.take();
    update_height(&mut y);
    x.right = Some(y);
    update_height(&mut x);
    x
}

fn rotate_left(mut x: Box<FeatureNode>) -> Box<FeatureNode> {
    let mut y = x.right.take().expect("left rotation needs a right child");
    x.right = y.left.take();
    update_height(&mut x);
    y.left = Some(x);
    update_height(&mut y);
    y
}

/// Restore `|balance| <= 1` at this node, dispatching on the imbalance case:
/// left-heavy with non-right-heavy child is a single right rotation,
/// left-heavy with right-heavy child rotates the child left first, and the
/// two right-heavy cases mirror those.
fn rebalance(mut node: Box<FeatureNode>) -> Box<FeatureNode> {
    update_height(&mut node);
    let balance = balance_factor(&node);
    if balance > 1 {
        if balance_factor(node.left.as_ref().unwrap()) < 0 {
            node.left = Some(rotate_left(node.left.take().unwrap()));
        }
        return rotate_right(node);
    }
    if balance < -1 {
        if balance_factor(node.right.as_ref().unwrap()) > 0 {
            node.right = Some(rotate_right(node.right.take().unwrap()));
        }
        return rotate_left(node);
    }
    node
}

impl TreeGrid {
    /// Empty grid accepting values of the given shape over `[0, L-1]`.
    pub fn new(value_shape: Vec<usize>, sequence_len: usize) -> Self {
        TreeGrid {
            root: None,
            node_count: 0,
            value_shape,
            key_domain: (0.0, (sequence_len.max(1) - 1) as f64),
        }
    }

    /// Uniform initialization: `n` keys at `i * (L-1) / (n-1)` including both
    /// endpoints, so the keys delimit `n - 1` intervals and no in-range query
    /// ever extrapolates. Values come from the initializer.
    pub fn from_uniform<F>(
        sequence_len: usize,
        n: usize,
        value_shape: Vec<usize>,
        mut value_init: F,
    ) -> Result<Self, TreeError>
    where
        F: FnMut(f64) -> Tensor,
    {
        if n < 2 || n > sequence_len {
            return Err(TreeError::BadNodeCount {
                n,
                len: sequence_len,
            });
        }
        let mut grid = TreeGrid::new(value_shape, sequence_len);
        let span = (sequence_len - 1) as f64;
        for i in 0..n {
            let key = i as f64 * span / (n - 1) as f64;
            grid.insert(key, value_init(key))?;
        }
        Ok(grid)
    }

    /// Uniform initialization with values drawn uniformly from [-1e-2, 1e-2].
    pub fn from_uniform_random<R: Rng>(
        sequence_len: usize,
        n: usize,
        value_shape: Vec<usize>,
        rng: &mut R,
    ) -> Result<Self, TreeError> {
        let shape = value_shape.clone();
        Self::from_uniform(sequence_len, n, value_shape, |_| {
            Tensor::uniform(shape.clone(), -1e-2, 1e-2, rng).with_requires_grad(true)
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn is_empty(&self) -> bool {
        self.node_count == 0
    }

    pub fn value_shape(&self) -> &[usize] {
        &self.value_shape
    }

    pub fn key_domain(&self) -> (f64, f64) {
        self.key_domain
    }

    pub fn height(&self) -> i32 {
        height(&self.root)
    }

    pub fn insert(&mut self, key: f64, value: Tensor) -> Result<(), TreeError> {
        if value.shape() != self.value_shape.as_slice() {
            return Err(TreeError::ValueShape {
                got: value.shape().to_vec(),
                want: self.value_shape.clone(),
            });
        }
        let root = self.root.take();
        let root = Self::insert_node(root, key, value)?;
        self.root = Some(root);
        self.node_count += 1;
        Ok(())
    }

    fn insert_node(
        node: Option<Box<FeatureNode>>,
        key: f64,
        value: Tensor,
    ) -> Result<Box<FeatureNode>, TreeError> {
        match node {
            None => Ok(Box::new(FeatureNode::new(key, value))),
            Some(mut n) => {
                if key == n.key {
                    return Err(TreeError::DuplicateKey(key));
                }
                if key < n.key {
                    n.left = Some(Self::insert_node(n.left.take(), key, value)?);
                } else {
                    n.right = Some(Self::insert_node(n.right.take(), key, value)?);
                }
                Ok(rebalance(n))
            }
        }
    }

    /// Iterative bound search: descend from the root, recording the current
    /// node as upper bound before going left and as lower bound before going
    /// right; an exact hit sets both bounds. Queries beyond the key range
    /// clamp to the nearest node. Visits at most `height + 1` nodes.
    pub fn query_bounds(&self, t: f64) -> Result<BoundPair<'_>, TreeError> {
        let (pair, _) = self.query_bounds_counted(t)?;
        Ok(pair)
    }

    /// Same as [`Self::query_bounds`], also reporting how many nodes the
    /// descent visited.
    pub fn query_bounds_counted(&self, t: f64) -> Result<(BoundPair<'_>, usize), TreeError> {
        let mut current = self.root.as_deref().ok_or(TreeError::Empty)?;
        let mut lower: Option<&FeatureNode> = None;
        let mut upper: Option<&FeatureNode> = None;
        let mut visited = 0usize;
        loop {
            visited += 1;
            if t == current.key {
                lower = Some(current);
                upper = Some(current);
                break;
            } else if t < current.key {
                upper = Some(current);
                match current.left.as_deref() {
                    Some(next) => current = next,
                    None => break,
                }
            } else {
                lower = Some(current);
                match current.right.as_deref() {
                    Some(next) => current = next,
                    None => break,
                }
            }
        }
        // Clamp: before the minimum key only an upper bound exists, past the
        // maximum key only a lower bound exists.
        let (lower, upper) = match (lower, upper) {
            (Some(l), Some(u)) => (l, u),
            (None, Some(u)) => (u, u),
            (Some(l), None) => (l, l),
            (None, None) => unreachable!("non-empty tree always yields a bound"),
        };
        Ok((
            BoundPair {
                lower: Bound {
                    key: lower.key,
                    value: &lower.value,
                },
                upper: Bound {
                    key: upper.key,
                    value: &upper.value,
                },
            },
            visited,
        ))
    }

    /// Interpolation weights for a query between bounds: with
    /// `d_l = |t - k_l|` and `d_u = |k_u - t|`, the lower value is weighted
    /// by `d_u / (d_l + d_u)` and the upper by `d_l / (d_l + d_u)`.
    /// Degenerate bounds (exact hit or clamp) put all weight on the lower.
    pub fn interpolation_weights(pair: &BoundPair<'_>, t: f64) -> (f64, f64) {
        if pair.is_degenerate() {
            return (1.0, 0.0);
        }
        let d_l = (t - pair.lower.key).abs();
        let d_u = (pair.upper.key - t).abs();
        let total = d_l + d_u;
        (d_u / total, d_l / total)
    }

    /// Time embedding for a query: the weighted interpolation of the bound
    /// values. This is the inference path; training tapes the same formula
    /// through `lerp_combine` so gradients flow to the node values.
    pub fn time_embedding(&self, t: f64) -> Result<Tensor, TreeError> {
        let pair = self.query_bounds(t)?;
        let (w_l, w_u) = Self::interpolation_weights(&pair, t);
        if pair.is_degenerate() {
            return Ok(pair.lower.value.clone());
        }
        let data: Vec<f32> = pair
            .lower
            .value
            .data()
            .iter()
            .zip(pair.upper.value.data())
            .map(|(&a, &b)| (w_l * a as f64 + w_u * b as f64) as f32)
            .collect();
        Ok(Tensor::new(self.value_shape.clone(), data).expect("value shapes agree"))
    }

    /// Insert a node at the midpoint of two adjacent keys. The new value is
    /// the interpolated embedding at the midpoint, evaluated before the
    /// insertion, stored as an independent trainable parameter.
    pub fn midpoint_insert(&mut self, k_l: f64, k_u: f64) -> Result<f64, TreeError> {
        let keys = self.in_order_keys();
        let pos = keys
            .iter()
            .position(|&k| k == k_l)
            .ok_or(TreeError::MissingKey(k_l))?;
        if keys.get(pos + 1) != Some(&k_u) {
            return Err(TreeError::NotAdjacent {
                lower: k_l,
                upper: k_u,
            });
        }
        let k_in = (k_l + k_u) / 2.0;
        let value = self.time_embedding(k_in)?.with_requires_grad(true);
        self.insert(k_in, value)?;
        Ok(k_in)
    }

    /// All keys in strictly increasing order.
    pub fn in_order_keys(&self) -> Vec<f64> {
        let mut keys = Vec::with_capacity(self.node_count);
        fn walk(node: &Option<Box<FeatureNode>>, out: &mut Vec<f64>) {
            if let Some(n) = node {
                walk(&n.left, out);
                out.push(n.key);
                walk(&n.right, out);
            }
        }
        walk(&self.root, &mut keys);
        keys
    }

    /// Node values paired with keys, in key order.
    pub fn in_order_entries(&self) -> Vec<(f64, &Tensor)> {
        let mut out = Vec::with_capacity(self.node_count);
        fn walk<'a>(node: &'a Option<Box<FeatureNode>>, out: &mut Vec<(f64, &'a Tensor)>) {
            if let Some(n) = node {
                walk(&n.left, out);
                out.push((n.key, &n.value));
                walk(&n.right, out);
            }
        }
        walk(&self.root, &mut out);
        out
    }

    pub fn value(&self, key: f64) -> Option<&Tensor> {
        let mut current = self.root.as_deref();
        while let Some(n) = current {
            if key == n.key {
                return Some(&n.value);
            }
            current = if key < n.key {
                n.left.as_deref()
            } else {
                n.right.as_deref()
            };
        }
        None
    }

    pub fn value_mut(&mut self, key: f64) -> Option<&mut Tensor> {
        let mut current = self.root.as_deref_mut();
        while let Some(n) = current {
            if key == n.key {
                return Some(&mut n.value);
            }
            current = if key < n.key {
                n.left.as_deref_mut()
            } else {
                n.right.as_deref_mut()
            };
        }
        None
    }

    /// Check BST order, stored heights, balance factors and the node count.
    /// Returns [`ValidationReport::Pass`] or the first violation found.
    pub fn validate(&self) -> ValidationReport {
        fn check(
            node: &Option<Box<FeatureNode>>,
            lo: Option<f64>,
            hi: Option<f64>,
            count: &mut usize,
        ) -> Result<i32, ValidationReport> {
            let Some(n) = node else { return Ok(-1) };
            *count += 1;
            if lo.is_some_and(|lo| n.key <= lo) || hi.is_some_and(|hi| n.key >= hi) {
                return Err(ValidationReport::BstOrderViolation { key: n.key });
            }
            let lh = check(&n.left, lo, Some(n.key), count)?;
            let rh = check(&n.right, Some(n.key), hi, count)?;
            let actual = 1 + lh.max(rh);
            if n.height != actual {
                return Err(ValidationReport::HeightMismatch {
                    key: n.key,
                    stored: n.height,
                    actual,
                });
            }
            let balance = lh - rh;
            if balance.abs() > 1 {
                return Err(ValidationReport::ImbalancedNode {
                    key: n.key,
                    balance,
                });
            }
            Ok(actual)
        }
        let mut count = 0usize;
        match check(&self.root, None, None, &mut count) {
            Err(report) => report,
            Ok(_) => {
                if count != self.node_count {
                    ValidationReport::NodeCountMismatch {
                        stored: self.node_count,
                        actual: count,
                    }
                } else {
                    ValidationReport::Pass
                }
            }
        }
    }

    /// Pre-order structure dump.
    pub fn snapshot(&self) -> Vec<NodeSnapshot> {
        let mut out = Vec::with_capacity(self.node_count);
        fn walk(node: &Option<Box<FeatureNode>>, out: &mut Vec<NodeSnapshot>) {
            if let Some(n) = node {
                out.push(NodeSnapshot {
                    key: n.key,
                    height: n.height,
                    left: n.left.as_ref().map(|c| c.key),
                    right: n.right.as_ref().map(|c| c.key),
                });
                walk(&n.left, out);
                walk(&n.right, out);
            }
        }
        walk(&self.root, &mut out);
        out
    }

    pub fn root_key(&self) -> Option<f64> {
        self.root.as_ref().map(|n| n.key)
    }

    /// Rebuild a grid from sorted `(key, value)` pairs, e.g. after decoding
    /// a model container.
    pub fn from_entries(
        sequence_len: usize,
        value_shape: Vec<usize>,
        entries: Vec<(f64, Tensor)>,
    ) -> Result<Self, TreeError> {
        let mut grid = TreeGrid::new(value_shape, sequence_len);
        for (key, value) in entries {
            grid.insert(key, value.with_requires_grad(true))?;
        }
        Ok(grid)
    }

    #[cfg(test)]
    fn corrupt_root_height(&mut self) {
        if let Some(root) = self.root.as_deref_mut() {
            root.height += 5;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f32) -> Tensor {
        Tensor::new(vec![1, 1, 1], vec![v]).unwrap()
    }

    fn grid_with_keys(keys: &[f64]) -> TreeGrid {
        let mut grid = TreeGrid::new(vec![1, 1, 1], 1024);
        for &k in keys {
            grid.insert(k, scalar(k as f32)).unwrap();
        }
        grid
    }

    #[test]
    fn from_uniform_places_endpoint_inclusive_keys() {
        let grid = TreeGrid::from_uniform(5, 5, vec![1, 1, 1], |k| scalar(k as f32)).unwrap();
        assert_eq!(grid.in_order_keys(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert!(grid.validate().is_pass());
    }

    #[test]
    fn from_uniform_ratio_point_one_of_600_gives_60_keys() {
        let grid = TreeGrid::from_uniform(600, 60, vec![1, 1, 1], |k| scalar(k as f32)).unwrap();
        assert_eq!(grid.node_count(), 60);
        let keys = grid.in_order_keys();
        assert_eq!(keys[0], 0.0);
        assert_eq!(keys[59], 599.0);
    }

    #[test]
    fn from_uniform_132_by_13_partitions_every_frame_once() {
        let grid = TreeGrid::from_uniform(132, 13, vec![1, 1, 1], |k| scalar(k as f32)).unwrap();
        let keys = grid.in_order_keys();
        assert_eq!(keys.len(), 13);
        // 12 intervals; each frame index falls in exactly one of them
        // (last interval right-closed).
        for frame in 0..132 {
            let t = frame as f64;
            let mut containing = 0;
            for j in 0..12 {
                let last = j == 11;
                if t >= keys[j] && (t < keys[j + 1] || (last && t <= keys[j + 1])) {
                    containing += 1;
                }
            }
            assert_eq!(containing, 1, "frame {frame}");
        }
    }

    #[test]
    fn from_uniform_rejects_single_node() {
        assert!(matches!(
            TreeGrid::from_uniform(10, 1, vec![1, 1, 1], |k| scalar(k as f32)),
            Err(TreeError::BadNodeCount { n: 1, .. })
        ));
    }

    #[test]
    fn query_interior_returns_surrounding_keys() {
        let grid = grid_with_keys(&[0.0, 4.0, 8.0]);
        let pair = grid.query_bounds(2.0).unwrap();
        assert_eq!(pair.lower.key, 0.0);
        assert_eq!(pair.upper.key, 4.0);
    }

    #[test]
    fn query_exact_hit_sets_both_bounds() {
        let grid = grid_with_keys(&[0.0, 4.0, 8.0]);
        let pair = grid.query_bounds(4.0).unwrap();
        assert_eq!(pair.lower.key, 4.0);
        assert_eq!(pair.upper.key, 4.0);
        assert!(pair.is_degenerate());
    }

    #[test]
    fn query_past_max_clamps_to_last_node() {
        let grid = grid_with_keys(&[0.0, 4.0, 8.0]);
        let pair = grid.query_bounds(9.0).unwrap();
        assert_eq!(pair.lower.key, 8.0);
        assert_eq!(pair.upper.key, 8.0);
    }

    #[test]
    fn query_before_min_clamps_to_first_node() {
        let grid = grid_with_keys(&[0.0, 4.0, 8.0]);
        let pair = grid.query_bounds(-1.0).unwrap();
        assert_eq!(pair.lower.key, 0.0);
        assert_eq!(pair.upper.key, 0.0);
    }

    #[test]
    fn query_empty_tree_is_rejected() {
        let grid = TreeGrid::new(vec![1, 1, 1], 8);
        assert!(matches!(grid.query_bounds(0.0), Err(TreeError::Empty)));
    }

    #[test]
    fn embedding_at_key_returns_value_exactly() {
        let grid = grid_with_keys(&[0.0, 10.0]);
        let emb = grid.time_embedding(0.0).unwrap();
        assert_eq!(emb.data(), &[0.0]);
        let emb = grid.time_embedding(10.0).unwrap();
        assert_eq!(emb.data(), &[10.0]);
    }

    #[test]
    fn embedding_closed_form_scalar_case() {
        // keys {0, 10}, values {1, 3}: t = 2.5 gives 0.75*1 + 0.25*3 = 1.5.
        let mut grid = TreeGrid::new(vec![1, 1, 1], 16);
        grid.insert(0.0, scalar(1.0)).unwrap();
        grid.insert(10.0, scalar(3.0)).unwrap();
        let emb = grid.time_embedding(2.5).unwrap();
        assert_eq!(emb.data(), &[1.5]);
    }

    #[test]
    fn embedding_midpoint_is_elementwise_average() {
        let mut grid = TreeGrid::new(vec![1, 2, 2], 16);
        grid.insert(0.0, Tensor::new(vec![1, 2, 2], vec![0.0; 4]).unwrap())
            .unwrap();
        grid.insert(8.0, Tensor::new(vec![1, 2, 2], vec![1.0; 4]).unwrap())
            .unwrap();
        let emb = grid.time_embedding(4.0).unwrap();
        assert_eq!(emb.data(), &[0.5; 4]);
    }

    #[test]
    fn ascending_inserts_trigger_left_rotation() {
        // RR case: inserting 1, 2, 3 leaves 2 at the root with children 1, 3.
        let grid = grid_with_keys(&[1.0, 2.0, 3.0]);
        assert_eq!(grid.root_key(), Some(2.0));
        let snap = grid.snapshot();
        assert_eq!(snap[0].left, Some(1.0));
        assert_eq!(snap[0].right, Some(3.0));
        assert_eq!(snap[0].height, 1);
    }

    #[test]
    fn ll_case_single_right_rotation() {
        // 5 becomes unbalanced with a left-heavy child; right rotation at 5.
        let grid = grid_with_keys(&[5.0, 3.0, 2.0]);
        assert_eq!(grid.root_key(), Some(3.0));
        let snap = grid.snapshot();
        assert_eq!(snap[0].left, Some(2.0));
        assert_eq!(snap[0].right, Some(5.0));
    }

    #[test]
    fn lr_case_left_then_right_rotation() {
        // 5 unbalanced (balance 2) with child 3 right-heavy (balance -1):
        // left rotation at 3 then right rotation at 5.
        let grid = grid_with_keys(&[5.0, 3.0, 4.0]);
        assert_eq!(grid.root_key(), Some(4.0));
        let snap = grid.snapshot();
        assert_eq!(snap[0].left, Some(3.0));
        assert_eq!(snap[0].right, Some(5.0));
    }

    #[test]
    fn rl_case_right_then_left_rotation() {
        let grid = grid_with_keys(&[4.0, 6.0, 5.0]);
        assert_eq!(grid.root_key(), Some(5.0));
        let snap = grid.snapshot();
        assert_eq!(snap[0].left, Some(4.0));
        assert_eq!(snap[0].right, Some(6.0));
    }

    #[test]
    fn right_rotation_reattaches_inner_subtree() {
        // Unbalanced 6 with left-heavy subtree: after the right rotation at 6,
        // 6 is the right child of 4 and 4's former right child (5) becomes
        // 6's left child.
        let grid = grid_with_keys(&[6.0, 4.0, 7.0, 3.0, 5.0, 2.0]);
        assert_eq!(grid.root_key(), Some(4.0));
        let snap = grid.snapshot();
        let root = &snap[0];
        assert_eq!(root.right, Some(6.0));
        let six = snap.iter().find(|s| s.key == 6.0).unwrap();
        assert_eq!(six.left, Some(5.0));
        assert_eq!(six.right, Some(7.0));
        assert!(grid.validate().is_pass());
    }

    #[test]
    fn insert_duplicate_is_rejected() {
        let mut grid = grid_with_keys(&[1.0, 2.0]);
        let err = grid.insert(2.0, scalar(0.0)).unwrap_err();
        assert!(matches!(err, TreeError::DuplicateKey(k) if k == 2.0));
        assert_eq!(grid.node_count(), 2);
    }

    #[test]
    fn insert_wrong_shape_is_rejected() {
        let mut grid = TreeGrid::new(vec![2, 2, 2], 8);
        let err = grid.insert(0.0, scalar(0.0)).unwrap_err();
        assert!(matches!(err, TreeError::ValueShape { .. }));
    }

    #[test]
    fn midpoint_insert_splits_interval() {
        let mut grid = grid_with_keys(&[10.0, 20.0]);
        let key = grid.midpoint_insert(10.0, 20.0).unwrap();
        assert_eq!(key, 15.0);
        assert_eq!(grid.in_order_keys(), vec![10.0, 15.0, 20.0]);
    }

    #[test]
    fn midpoint_insert_fractional_keys_are_legal() {
        let mut grid = grid_with_keys(&[0.0, 1.0]);
        let key = grid.midpoint_insert(0.0, 1.0).unwrap();
        assert_eq!(key, 0.5);
    }

    #[test]
    fn midpoint_value_interpolates_bounds() {
        let mut grid = TreeGrid::new(vec![1, 1, 2], 8);
        grid.insert(0.0, Tensor::new(vec![1, 1, 2], vec![0.0, 0.0]).unwrap())
            .unwrap();
        grid.insert(4.0, Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap())
            .unwrap();
        grid.midpoint_insert(0.0, 4.0).unwrap();
        assert_eq!(grid.value(2.0).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn midpoint_insert_rejects_non_adjacent_bounds() {
        let mut grid = grid_with_keys(&[0.0, 4.0, 8.0]);
        assert!(matches!(
            grid.midpoint_insert(0.0, 8.0),
            Err(TreeError::NotAdjacent { .. })
        ));
        assert!(matches!(
            grid.midpoint_insert(1.0, 4.0),
            Err(TreeError::MissingKey(_))
        ));
    }

    #[test]
    fn in_order_keys_empty_and_uniform() {
        let empty = TreeGrid::new(vec![1, 1, 1], 8);
        assert!(empty.in_order_keys().is_empty());
        let grid = TreeGrid::from_uniform(600, 60, vec![1, 1, 1], |k| scalar(k as f32)).unwrap();
        let keys = grid.in_order_keys();
        assert_eq!(keys.len(), 60);
        let spacing = 599.0 / 59.0;
        for (i, k) in keys.iter().enumerate() {
            assert!((k - i as f64 * spacing).abs() < 1e-9);
        }
    }

    #[test]
    fn validate_passes_on_fresh_uniform_tree() {
        let grid = TreeGrid::from_uniform(64, 8, vec![1, 1, 1], |k| scalar(k as f32)).unwrap();
        assert_eq!(grid.validate(), ValidationReport::Pass);
    }

    #[test]
    fn validate_detects_corrupted_height() {
        let mut grid = grid_with_keys(&[1.0, 2.0, 3.0]);
        grid.corrupt_root_height();
        assert!(matches!(
            grid.validate(),
            ValidationReport::HeightMismatch { .. }
        ));
    }

    #[test]
    fn embedding_is_piecewise_linear_and_exact_at_keys() {
        let mut grid = TreeGrid::new(vec![1, 1, 1], 64);
        for &(k, v) in &[(0.0, 1.0), (8.0, -2.0), (20.0, 4.0), (63.0, 0.5)] {
            grid.insert(k, scalar(v)).unwrap();
        }
        // Exact at keys.
        for &(k, v) in &[(0.0, 1.0f32), (8.0, -2.0), (20.0, 4.0), (63.0, 0.5)] {
            assert_eq!(grid.time_embedding(k).unwrap().data()[0], v);
        }
        // Linear within an interval: second differences vanish.
        let e = |t: f64| grid.time_embedding(t).unwrap().data()[0] as f64;
        for ts in [[9.0, 10.0, 11.0], [12.0, 14.0, 16.0]] {
            let second_diff = e(ts[2]) - 2.0 * e(ts[1]) + e(ts[0]);
            assert!(second_diff.abs() < 1e-5, "{second_diff}");
        }
        // Weights sum to 1 for interior queries.
        let pair = grid.query_bounds(10.0).unwrap();
        let (wl, wu) = TreeGrid::interpolation_weights(&pair, 10.0);
        assert!((wl + wu - 1.0).abs() < 1e-12);
    }
}
