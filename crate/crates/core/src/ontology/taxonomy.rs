use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaxonomyError {
    #[error("cycle through concept {0:?}")]
    CycleDetected(String),
    #[error("expected exactly one root, found {0:?}")]
    MultipleRoots(Vec<String>),
    #[error("parent {parent:?} of {child:?} is never declared")]
    DanglingParent { child: String, parent: String },
    #[error("syntax error on line {0}")]
    Syntax(usize),
    #[error("unknown concept {0:?}")]
    UnknownConcept(String),
}

/// Concept hierarchy loaded from `child < parent` lines.
///
/// Ancestor closures and depths are precomputed at load time; the value is
/// immutable afterwards.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
    parents: Vec<Vec<usize>>,
    root: usize,
    depth: Vec<u32>,
    // reflexive ancestor closure per concept
    ancestors: Vec<BTreeSet<usize>>,
}

fn strip_comment(line: &str) -> &str {
    let trimmed = line.trim_start();
    if trimmed.starts_with('#') {
        return "";
    }
    let bytes = line.as_bytes();
    for i in 1..bytes.len() {
        if bytes[i] == b'#' && bytes[i - 1].is_ascii_whitespace() {
            return &line[..i];
        }
    }
    line
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && !s.contains(char::is_whitespace) && !s.contains('<')
}

impl Taxonomy {
    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        let mut declared: BTreeSet<String> = BTreeSet::new();
        let mut edges: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('<') {
                Some((child, parent)) => {
                    let (child, parent) = (child.trim(), parent.trim());
                    if !valid_name(child) || !valid_name(parent) {
                        return Err(TaxonomyError::Syntax(lineno + 1));
                    }
                    declared.insert(child.to_string());
                    edges.push((child.to_string(), parent.to_string()));
                }
                None => {
                    if !valid_name(line) {
                        return Err(TaxonomyError::Syntax(lineno + 1));
                    }
                    declared.insert(line.to_string());
                }
            }
        }
        for (child, parent) in &edges {
            if !declared.contains(parent) {
                return Err(TaxonomyError::DanglingParent {
                    child: child.clone(),
                    parent: parent.clone(),
                });
            }
        }
        let names: Vec<String> = declared.into_iter().collect();
        let index: BTreeMap<String, usize> =
            names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let mut parents = vec![Vec::new(); names.len()];
        let mut children = vec![Vec::new(); names.len()];
        for (child, parent) in &edges {
            let (c, p) = (index[child], index[parent]);
            if !parents[c].contains(&p) {
                parents[c].push(p);
                children[p].push(c);
            }
        }
        for list in parents.iter_mut().chain(children.iter_mut()) {
            list.sort_unstable();
        }
        if let Some(c) = find_cycle(&parents) {
            return Err(TaxonomyError::CycleDetected(names[c].clone()));
        }
        let roots: Vec<usize> = (0..names.len()).filter(|&i| parents[i].is_empty()).collect();
        if roots.len() != 1 {
            return Err(TaxonomyError::MultipleRoots(
                roots.iter().map(|&i| names[i].clone()).collect(),
            ));
        }
        let root = roots[0];

        let mut depth = vec![0u32; names.len()];
        depth[root] = 1;
        let mut queue = VecDeque::from([root]);
        while let Some(n) = queue.pop_front() {
            for &c in &children[n] {
                if depth[c] == 0 {
                    depth[c] = depth[n] + 1;
                    queue.push_back(c);
                }
            }
        }

        let mut ancestors: Vec<Option<BTreeSet<usize>>> = vec![None; names.len()];
        for i in 0..names.len() {
            closure(i, &parents, &mut ancestors);
        }
        Ok(Self {
            names,
            index,
            parents,
            root,
            depth,
            ancestors: ancestors.into_iter().map(Option::unwrap_or_default).collect(),
        })
    }

    fn idx(&self, c: &str) -> Result<usize, TaxonomyError> {
        self.index
            .get(c)
            .copied()
            .ok_or_else(|| TaxonomyError::UnknownConcept(c.to_string()))
    }

    pub fn contains(&self, c: &str) -> bool {
        self.index.contains_key(c)
    }

    pub fn root(&self) -> &str {
        &self.names[self.root]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// All concepts in lexicographic order.
    pub fn concepts(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn parents(&self, c: &str) -> Result<Vec<&str>, TaxonomyError> {
        let i = self.idx(c)?;
        Ok(self.parents[i].iter().map(|&p| self.names[p].as_str()).collect())
    }

    /// 1 + length of the shortest parent path to the root.
    pub fn depth(&self, c: &str) -> Result<u32, TaxonomyError> {
        Ok(self.depth[self.idx(c)?])
    }

    /// Reflexive: `c` is among its own ancestors. Lexicographic order.
    pub fn ancestors(&self, c: &str) -> Result<Vec<&str>, TaxonomyError> {
        let i = self.idx(c)?;
        Ok(self.ancestors[i].iter().map(|&a| self.names[a].as_str()).collect())
    }

    pub fn subsumes(&self, ancestor: &str, descendant: &str) -> Result<bool, TaxonomyError> {
        let a = self.idx(ancestor)?;
        let d = self.idx(descendant)?;
        Ok(self.ancestors[d].contains(&a))
    }

    /// Deepest common ancestor; ties go to the lexicographically smallest IRI.
    pub fn lca(&self, a: &str, b: &str) -> Result<&str, TaxonomyError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        // names are sorted, so iterating indices ascending visits IRIs in order
        let best = self.ancestors[ia]
            .intersection(&self.ancestors[ib])
            .fold(None::<usize>, |best, &c| match best {
                Some(b) if self.depth[b] >= self.depth[c] => Some(b),
                _ => Some(c),
            })
            .unwrap_or(self.root);
        Ok(&self.names[best])
    }

    /// Wu-Palmer similarity `2·depth(lca) / (depth(a) + depth(b))`, capped at 1.
    pub fn similarity(&self, a: &str, b: &str) -> Result<f64, TaxonomyError> {
        let lca = self.lca(a, b)?;
        let num = 2.0 * f64::from(self.depth(lca)?);
        let den = f64::from(self.depth(a)? + self.depth(b)?);
        Ok((num / den).min(1.0))
    }

    /// Concepts directly under the root, sorted.
    pub fn top_level_concepts(&self) -> Vec<&str> {
        (0..self.names.len())
            .filter(|&i| self.parents[i].contains(&self.root))
            .map(|i| self.names[i].as_str())
            .collect()
    }

    /// The top-level branch `c` belongs to (smallest IRI when several);
    /// `None` for the root.
    pub fn top_level_of(&self, c: &str) -> Result<Option<&str>, TaxonomyError> {
        let i = self.idx(c)?;
        Ok(self.ancestors[i]
            .iter()
            .find(|&&a| self.parents[a].contains(&self.root))
            .map(|&a| self.names[a].as_str()))
    }

    /// Every concept whose similarity to `c` reaches `threshold`.
    pub fn similar_to(&self, c: &str, threshold: f64) -> Result<Vec<&str>, TaxonomyError> {
        self.idx(c)?;
        let mut out = Vec::new();
        for other in &self.names {
            if self.similarity(c, other)? >= threshold {
                out.push(other.as_str());
            }
        }
        Ok(out)
    }
}

fn closure(i: usize, parents: &[Vec<usize>], memo: &mut Vec<Option<BTreeSet<usize>>>) {
    if memo[i].is_some() {
        return;
    }
    let mut set = BTreeSet::from([i]);
    for &p in &parents[i] {
        closure(p, parents, memo);
        set.extend(memo[p].as_ref().into_iter().flatten().copied());
    }
    memo[i] = Some(set);
}

fn find_cycle(parents: &[Vec<usize>]) -> Option<usize> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let mut marks = vec![Mark::New; parents.len()];
    for start in 0..parents.len() {
        if marks[start] != Mark::New {
            continue;
        }
        // iterative DFS: (node, next parent index)
        let mut stack = vec![(start, 0usize)];
        marks[start] = Mark::Active;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if let Some(&p) = parents[node].get(*next) {
                *next += 1;
                match marks[p] {
                    Mark::Active => return Some(p),
                    Mark::New => {
                        marks[p] = Mark::Active;
                        stack.push((p, 0));
                    }
                    Mark::Done => {}
                }
            } else {
                marks[node] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}

pub fn load_taxonomy(text: &str) -> Result<Taxonomy, TaxonomyError> {
    Taxonomy::parse(text)
}
