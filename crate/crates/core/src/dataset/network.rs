use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::Dataset;

/// Tests as nodes, joined whenever a study evaluated both.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkGraph {
    pub nodes: Vec<String>,
    /// (test_a, test_b, study) with test_a < test_b.
    pub edges: Vec<(String, String, String)>,
    /// Each component sorted; components ordered by their lowest test id,
    /// which also serves as the component label.
    pub components: Vec<Vec<String>>,
}

impl NetworkGraph {
    pub fn is_connected(&self) -> bool {
        self.components.len() <= 1
    }

    pub fn component_of(&self, test: &str) -> Option<&str> {
        self.components
            .iter()
            .find(|c| c.iter().any(|t| t == test))
            .map(|c| c[0].as_str())
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

pub fn build_network_graph(d: &Dataset) -> NetworkGraph {
    let nodes: Vec<String> = d.tests().iter().map(|t| t.id.clone()).collect();
    let mut by_study: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for (study, test) in d.study_test_pairs() {
        if let Some(k) = d.test_index(test) {
            by_study.entry(study).or_default().insert(k);
        }
    }

    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    let mut edges = Vec::new();
    for (study, tests) in &by_study {
        let tests: Vec<usize> = tests.iter().copied().collect();
        for (a, &ka) in tests.iter().enumerate() {
            for &kb in &tests[a + 1..] {
                edges.push((nodes[ka].clone(), nodes[kb].clone(), study.to_string()));
                let (ra, rb) = (find(&mut parent, ka), find(&mut parent, kb));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    edges.sort();

    // Nodes are sorted, so each root's first member is the lowest id.
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for k in 0..nodes.len() {
        let r = find(&mut parent, k);
        groups.entry(r).or_default().push(nodes[k].clone());
    }
    let mut components: Vec<Vec<String>> = groups.into_values().collect();
    components.sort();

    NetworkGraph { nodes, edges, components }
}
