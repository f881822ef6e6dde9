//! Layered venue taxonomy.
//!
//! A [`VenueHierarchy`] is a rooted tree in which every edge goes from layer
//! `l` to layer `l + 1`. The root (`ROOT`) sits at layer 0 and is always
//! present, even if the source file only lists layer-1 categories. Leaves are
//! the label-bearing nodes; their indices are contiguous and follow the
//! lexicographic order of their ids.
//!
//! Two text forms are accepted by [`VenueHierarchy::parse`]:
//!
//! * edge form, one `child<TAB>parent<TAB>layer` record per line (the layer
//!   column may be omitted, an empty parent declares a root);
//! * nested form, one id per line, children indented under their parent.
//!
//! Lines beginning with `#` are comments in both forms.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Id of the distinguished virtual root.
pub const ROOT: &str = "ROOT";

/// Suffix appended to an internal node id to name its spawned leaf.
pub const SPAWNED_LEAF_SUFFIX: &str = "#leaf";

/// Dense index of a node inside one [`VenueHierarchy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VenueHierarchy {
    names: Vec<String>,
    lookup: BTreeMap<String, NodeId>,
    parent: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    layer: Vec<usize>,
    leaves: Vec<NodeId>,
    leaf_of: Vec<Option<usize>>,
    root: NodeId,
}

/// Result of [`VenueHierarchy::normalize_leaves`].
#[derive(Debug, Clone)]
pub struct Normalized {
    pub hierarchy: VenueHierarchy,
    /// Labeled internal node id -> id of the leaf spawned under it.
    pub remap: BTreeMap<String, String>,
}

impl Normalized {
    /// Where samples labeled `name` live after normalization.
    pub fn target_of<'a>(&'a self, name: &'a str) -> &'a str {
        self.remap.get(name).map(String::as_str).unwrap_or(name)
    }
}

struct Record {
    parent: Option<String>,
    layer: Option<usize>,
    line: usize,
}

impl VenueHierarchy {
    /// Parse either the edge form or the nested form; the edge form is
    /// detected by the presence of a tab on any non-comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let body: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| {
                let t = l.trim_start();
                !t.is_empty() && !t.starts_with('#')
            })
            .collect();
        if body.iter().any(|(_, l)| l.contains('\t')) {
            Self::parse_edges(&body)
        } else {
            Self::parse_nested(&body)
        }
    }

    fn parse_edges(lines: &[(usize, &str)]) -> Result<Self> {
        let mut records: BTreeMap<String, Record> = BTreeMap::new();
        for &(line, raw) in lines {
            let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
            if fields.len() < 2 || fields.len() > 3 {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected `child<TAB>parent<TAB>layer`, found {} fields", fields.len()),
                });
            }
            let child = fields[0];
            if child.is_empty() {
                return Err(Error::Parse { line, msg: "empty node id".into() });
            }
            let parent = match fields[1] {
                "" | "-" => None,
                p => Some(p.to_string()),
            };
            let layer = match fields.get(2) {
                None | Some(&"") => None,
                Some(s) => Some(s.parse::<usize>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("invalid layer `{s}`"),
                })?),
            };
            if records
                .insert(child.to_string(), Record { parent, layer, line })
                .is_some()
            {
                return Err(Error::DuplicateNode(child.to_string()));
            }
        }
        Self::from_records(records)
    }

    fn parse_nested(lines: &[(usize, &str)]) -> Result<Self> {
        let mut records: BTreeMap<String, Record> = BTreeMap::new();
        let explicit_root = lines.first().map(|(_, l)| l.trim() == ROOT).unwrap_or(false);
        let mut unit = 0usize;
        // stack[depth] = id of the most recent node at that depth
        let mut stack: Vec<String> = Vec::new();
        for &(line, raw) in lines {
            let indent = raw.len() - raw.trim_start_matches(' ').len();
            let id = raw.trim();
            if indent > 0 && unit == 0 {
                unit = indent;
            }
            if unit > 0 && indent % unit != 0 {
                return Err(Error::Parse { line, msg: format!("indentation {indent} is not a multiple of {unit}") });
            }
            let depth = indent.checked_div(unit).unwrap_or(0);
            if depth > stack.len() {
                return Err(Error::Parse { line, msg: "indentation skips a level".into() });
            }
            stack.truncate(depth);
            let parent = match stack.last() {
                Some(p) => Some(p.clone()),
                None if explicit_root => None,
                None => Some(ROOT.to_string()),
            };
            if explicit_root && depth == 0 && id != ROOT {
                return Err(Error::MultipleRoots(vec![ROOT.to_string(), id.to_string()]));
            }
            if records.insert(id.to_string(), Record { parent, layer: None, line }).is_some() {
                return Err(Error::DuplicateNode(id.to_string()));
            }
            stack.push(id.to_string());
        }
        Self::from_records(records)
    }

    /// Build from `(child, parent)` pairs; layers are inferred and `ROOT` is
    /// implicit.
    pub fn from_edges<I, S, T>(edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut records = BTreeMap::new();
        for (line, (child, parent)) in edges.into_iter().enumerate() {
            let child = child.into();
            let rec = Record { parent: Some(parent.into()), layer: None, line: line + 1 };
            if records.insert(child.clone(), rec).is_some() {
                return Err(Error::DuplicateNode(child));
            }
        }
        Self::from_records(records)
    }

    fn from_records(mut records: BTreeMap<String, Record>) -> Result<Self> {
        match records.get(ROOT) {
            Some(r) if r.parent.is_some() => {
                return Err(Error::Invalid(format!("`{ROOT}` cannot have a parent (line {})", r.line)));
            }
            Some(r) if r.layer.is_some_and(|l| l != 0) => {
                return Err(Error::Invalid(format!("`{ROOT}` must be at layer 0 (line {})", r.line)));
            }
            Some(_) => {}
            None => {
                records.insert(ROOT.to_string(), Record { parent: None, layer: Some(0), line: 0 });
            }
        }

        let roots: Vec<String> = records
            .iter()
            .filter(|(_, r)| r.parent.is_none())
            .map(|(k, _)| k.clone())
            .collect();
        if roots.len() > 1 {
            return Err(Error::MultipleRoots(roots));
        }
        for (child, r) in &records {
            if let Some(p) = &r.parent {
                if !records.contains_key(p) {
                    return Err(Error::DanglingParent { child: child.clone(), parent: p.clone() });
                }
            }
        }

        let names: Vec<String> = records.keys().cloned().collect();
        let lookup: BTreeMap<String, NodeId> =
            names.iter().enumerate().map(|(i, n)| (n.clone(), NodeId(i))).collect();
        let parent: Vec<Option<NodeId>> = names
            .iter()
            .map(|n| records[n].parent.as_ref().map(|p| lookup[p]))
            .collect();
        let root = lookup[ROOT];

        // Every node has at most one parent, so a node whose parent chain
        // never reaches the root sits on (or hangs off) a cycle.
        let n = names.len();
        let mut depth: Vec<Option<usize>> = vec![None; n];
        depth[root.0] = Some(0);
        // visited_by[i] = 1 + index of the walk that first touched node i
        let mut visited_by = vec![0usize; n];
        let mut path = Vec::new();
        for start in 0..n {
            path.clear();
            let mut cur = start;
            while depth[cur].is_none() {
                if visited_by[cur] == start + 1 {
                    let cycle_start = path.iter().position(|&x| x == cur).unwrap_or(0);
                    let first = path[cycle_start..].iter().map(|&i| &names[i]).min().cloned();
                    return Err(Error::Cycle(first.unwrap_or_else(|| names[cur].clone())));
                }
                visited_by[cur] = start + 1;
                path.push(cur);
                cur = parent[cur].expect("only the root lacks a parent").0;
            }
            let mut d = depth[cur].unwrap_or(0);
            for &node in path.iter().rev() {
                d += 1;
                depth[node] = Some(d);
            }
        }
        let layer: Vec<usize> = depth.into_iter().map(|d| d.unwrap_or(0)).collect();

        for (i, name) in names.iter().enumerate() {
            let declared = records[name].layer;
            if let (Some(declared), Some(p)) = (declared, parent[i]) {
                if declared != layer[i] {
                    let parent_layer = records[&names[p.0]].layer.unwrap_or(layer[p.0]);
                    return Err(Error::LayerSkip {
                        child: name.clone(),
                        child_layer: declared,
                        parent: names[p.0].clone(),
                        parent_layer,
                    });
                }
            }
        }

        Ok(Self::assemble(names, lookup, parent, layer, root))
    }

    fn assemble(
        names: Vec<String>,
        lookup: BTreeMap<String, NodeId>,
        parent: Vec<Option<NodeId>>,
        layer: Vec<usize>,
        root: NodeId,
    ) -> Self {
        let n = names.len();
        let mut children = vec![Vec::new(); n];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[p.0].push(NodeId(i));
            }
        }
        // names are sorted, so NodeId order is lexicographic order
        let leaves: Vec<NodeId> = (0..n).filter(|&i| children[i].is_empty()).map(NodeId).collect();
        let mut leaf_of = vec![None; n];
        for (k, leaf) in leaves.iter().enumerate() {
            leaf_of[leaf.0] = Some(k);
        }
        Self { names, lookup, parent, children, layer, leaves, leaf_of, root }
    }

    /// Edge-form text that [`parse`](Self::parse) reads back to an equal value.
    pub fn serialize(&self) -> String {
        let mut out = String::from("# child\tparent\tlayer\n");
        let mut order: Vec<NodeId> = (0..self.len()).map(NodeId).filter(|&n| n != self.root).collect();
        order.sort_by_key(|&n| (self.layer(n), n));
        for n in order {
            let p = self.parent(n).expect("non-root node has a parent");
            let _ = writeln!(out, "{}\t{}\t{}", self.name(n), self.name(p), self.layer(n));
        }
        out
    }

    /// Spawn a leaf under every labeled internal node so that afterwards
    /// every labeled node (or its replacement) is a leaf.
    pub fn normalize_leaves<I, S>(&self, labeled: I) -> Result<Normalized>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut spawn = BTreeSet::new();
        for name in labeled {
            let name = name.as_ref();
            let id = self.node(name).ok_or_else(|| Error::UnknownNode(name.to_string()))?;
            if !self.is_leaf(id) {
                spawn.insert(id);
            }
        }
        if spawn.is_empty() {
            return Ok(Normalized { hierarchy: self.clone(), remap: BTreeMap::new() });
        }
        let mut edges: BTreeMap<String, (String, usize)> = BTreeMap::new();
        for i in 0..self.len() {
            let n = NodeId(i);
            if let Some(p) = self.parent(n) {
                edges.insert(self.name(n).to_string(), (self.name(p).to_string(), self.layer(n)));
            }
        }
        let mut remap = BTreeMap::new();
        for &id in &spawn {
            let leaf = format!("{}{}", self.name(id), SPAWNED_LEAF_SUFFIX);
            if self.node(&leaf).is_some() || edges.contains_key(&leaf) {
                return Err(Error::DuplicateNode(leaf));
            }
            edges.insert(leaf.clone(), (self.name(id).to_string(), self.layer(id) + 1));
            remap.insert(self.name(id).to_string(), leaf);
        }
        let records = edges
            .into_iter()
            .map(|(c, (p, l))| (c, Record { parent: Some(p), layer: Some(l), line: 0 }))
            .collect();
        Ok(Normalized { hierarchy: Self::from_records(records)?, remap })
    }

    /// Keep only the internal nodes of layers `1..=depth` and hang every leaf
    /// off its nearest surviving ancestor. The leaf set and leaf indices are
    /// unchanged; `depth = 0` attaches all leaves directly to the root.
    pub fn truncate(&self, depth: usize) -> Self {
        let mut records = BTreeMap::new();
        for i in 0..self.len() {
            let n = NodeId(i);
            let Some(mut p) = self.parent(n) else { continue };
            let keep = self.is_leaf(n) || self.layer(n) <= depth;
            if !keep {
                continue;
            }
            while self.layer(p) > depth {
                p = self.parent(p).expect("layer > 0 has a parent");
            }
            records.insert(
                self.name(n).to_string(),
                Record { parent: Some(self.name(p).to_string()), layer: None, line: 0 },
            );
        }
        Self::from_records(records).expect("truncation of a valid tree is valid")
    }

    /// Internal nodes (including the root), deepest layer first, then by id.
    pub fn internal_nodes(&self) -> Vec<NodeId> {
        let mut nodes: Vec<NodeId> = (0..self.len()).map(NodeId).filter(|&n| !self.is_leaf(n)).collect();
        nodes.sort_by(|&a, &b| self.layer(b).cmp(&self.layer(a)).then(a.cmp(&b)));
        nodes
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, n: NodeId) -> &str {
        &self.names[n.0]
    }

    pub fn parent(&self, n: NodeId) -> Option<NodeId> {
        self.parent[n.0]
    }

    pub fn children(&self, n: NodeId) -> &[NodeId] {
        &self.children[n.0]
    }

    pub fn layer(&self, n: NodeId) -> usize {
        self.layer[n.0]
    }

    pub fn max_layer(&self) -> usize {
        self.layer.iter().copied().max().unwrap_or(0)
    }

    pub fn is_leaf(&self, n: NodeId) -> bool {
        self.children[n.0].is_empty()
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Label index of a leaf, `None` for internal nodes.
    pub fn leaf_index(&self, n: NodeId) -> Option<usize> {
        self.leaf_of[n.0]
    }

    pub fn leaf_node(&self, label: usize) -> NodeId {
        self.leaves[label]
    }

    pub fn leaf_names(&self) -> Vec<String> {
        self.leaves.iter().map(|&n| self.name(n).to_string()).collect()
    }

    /// Label index for a leaf id.
    pub fn label_of(&self, name: &str) -> Result<usize> {
        let id = self.node(name).ok_or_else(|| Error::UnknownNode(name.to_string()))?;
        self.leaf_index(id).ok_or_else(|| Error::NotALeaf(name.to_string()))
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.names.len()).map(NodeId)
    }

    /// Ancestors of `n` from its parent up to the root.
    pub fn ancestors(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::successors(self.parent(n), move |&p| self.parent(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_tree() -> VenueHierarchy {
        VenueHierarchy::from_edges([("A", ROOT), ("B", ROOT), ("a1", "A"), ("a2", "A"), ("b1", "B")]).unwrap()
    }

    #[test]
    fn minimal_chain() {
        let h = VenueHierarchy::parse("A\tROOT\t1\na1\tA\t2\n").unwrap();
        assert_eq!(h.len(), 3);
        assert_eq!(h.leaf_names(), vec!["a1"]);
        let a1 = h.node("a1").unwrap();
        assert_eq!(h.layer(a1), 2);
        assert_eq!(h.name(h.parent(a1).unwrap()), "A");
    }

    #[test]
    fn two_branch_tree_maps() {
        let h = sample_tree();
        assert_eq!(h.len(), 6);
        assert_eq!(h.leaf_names(), vec!["a1", "a2", "b1"]);
        // brute force: every child appears in its parent's children list exactly once
        for n in h.nodes() {
            if let Some(p) = h.parent(n) {
                assert_eq!(h.children(p).iter().filter(|&&c| c == n).count(), 1);
                assert_eq!(h.layer(n), h.layer(p) + 1);
            }
            for &c in h.children(n) {
                assert_eq!(h.parent(c), Some(n));
            }
        }
        let a = h.node("A").unwrap();
        let names: Vec<&str> = h.children(a).iter().map(|&c| h.name(c)).collect();
        assert_eq!(names, ["a1", "a2"]);
    }

    #[test]
    fn cycle_is_rejected() {
        let err = VenueHierarchy::parse("A\tB\t1\nB\tA\t1\n").unwrap_err();
        assert!(matches!(err, Error::Cycle(ref n) if n == "A"), "{err}");
    }

    #[test]
    fn multiple_roots_rejected() {
        let err = VenueHierarchy::parse("A\t\t0\nb\tA\t1\n").unwrap_err();
        assert!(matches!(err, Error::MultipleRoots(_)));
    }

    #[test]
    fn layer_skip_rejected() {
        let err = VenueHierarchy::parse("A\tROOT\t1\na1\tA\t3\n").unwrap_err();
        assert!(matches!(err, Error::LayerSkip { ref child, child_layer: 3, parent_layer: 1, .. } if child == "a1"));
    }

    #[test]
    fn dangling_parent_rejected() {
        let err = VenueHierarchy::parse("a1\tZ\t2\n").unwrap_err();
        assert!(matches!(err, Error::DanglingParent { .. }));
    }

    #[test]
    fn comments_and_nested_form() {
        let text = "# venues\nA\n  a1\n  a2\nB\n  b1\n";
        let nested = VenueHierarchy::parse(text).unwrap();
        assert_eq!(nested, sample_tree());
        let explicit = VenueHierarchy::parse("ROOT\n  A\n    a1\n").unwrap();
        assert_eq!(explicit.leaf_names(), vec!["a1"]);
    }

    #[test]
    fn serialize_round_trip() {
        let h = sample_tree();
        let again = VenueHierarchy::parse(&h.serialize()).unwrap();
        assert_eq!(h, again);
    }

    #[test]
    fn normalize_spawns_under_internal() {
        let h = VenueHierarchy::from_edges([("A", ROOT), ("B", "A"), ("c", "B"), ("d", "B")]).unwrap();
        let norm = h.normalize_leaves(["B", "c"]).unwrap();
        let g = &norm.hierarchy;
        let spawned = g.node("B#leaf").unwrap();
        assert_eq!(g.layer(spawned), 3);
        assert_eq!(g.name(g.parent(spawned).unwrap()), "B");
        assert_eq!(norm.target_of("B"), "B#leaf");
        assert_eq!(norm.target_of("c"), "c");
        assert!(g.is_leaf(g.node(norm.target_of("B")).unwrap()));
    }

    #[test]
    fn normalize_identity_on_leaves() {
        let h = sample_tree();
        let norm = h.normalize_leaves(["a1", "b1"]).unwrap();
        assert_eq!(norm.hierarchy, h);
        assert!(norm.remap.is_empty());
    }

    #[test]
    fn normalize_two_internal_nodes() {
        let h = sample_tree();
        let norm = h.normalize_leaves(["A", "B", "a1"]).unwrap();
        assert_eq!(norm.hierarchy.num_leaves(), h.num_leaves() + 2);
        assert_eq!(norm.hierarchy.len(), h.len() + 2);
    }

    #[test]
    fn normalize_unknown_node() {
        assert!(matches!(sample_tree().normalize_leaves(["nope"]), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn internal_order_deepest_first() {
        let h = VenueHierarchy::from_edges([("A", ROOT), ("a1", "A")]).unwrap();
        let order: Vec<&str> = h.internal_nodes().iter().map(|&n| h.name(n)).collect();
        assert_eq!(order, ["A", ROOT]);

        let h = VenueHierarchy::from_edges([("A", ROOT), ("B", "A"), ("C", "A"), ("x", "B"), ("y", "C"), ("z", "A")])
            .unwrap();
        let order: Vec<&str> = h.internal_nodes().iter().map(|&n| h.name(n)).collect();
        assert_eq!(order, ["B", "C", "A", ROOT]);
    }

    #[test]
    fn truncate_keeps_leaves() {
        let h = VenueHierarchy::from_edges([("A", ROOT), ("B", "A"), ("c", "B"), ("d", "A"), ("e", ROOT)]).unwrap();
        let flat = h.truncate(0);
        assert_eq!(flat.leaf_names(), h.leaf_names());
        assert_eq!(flat.len(), h.num_leaves() + 1);
        assert!(flat.leaves().iter().all(|&l| flat.parent(l) == Some(flat.root())));
        let one = h.truncate(1);
        assert_eq!(one.name(one.parent(one.node("c").unwrap()).unwrap()), "A");
        assert_eq!(h.truncate(5), h);
    }
}
