//! Synthetic chained-lookup worlds: a fact graph whose values reference
//! other entities, pages that state the facts in templated prose, and
//! tasks whose answers require following a dependency chain of 2–4
//! lookups (configurable 1–6). Generation is fully determined by the
//! seed — identical files on every machine — so task sets and expected
//! scores can be committed as goldens.

use std::collections::{BTreeMap, BTreeSet};

use magellan_core::backends::fixture::CorpusPage;
use magellan_core::types::Task;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("infeasible parameters: {0}")]
    Infeasible(String),
}

/// splitmix64; hand-rolled so the byte stream never drifts with library
/// upgrades.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }
}

const SYLLABLES: &[&str] = &[
    "bar", "cel", "dor", "fen", "gal", "hul", "jor", "kav", "lum", "mar", "nev", "os", "pol",
    "quar", "ril", "sor", "tav", "urn", "vel", "wis", "yar", "zem",
];

const ATTRIBUTES: &[&str] = &[
    "steward",
    "founder",
    "patron",
    "emblem",
    "motto",
    "capital",
    "archive",
    "successor",
    "warden",
    "anthem",
    "crest",
    "ledger",
];

const TERMINAL_COLORS: &[&str] = &[
    "amber", "cobalt", "ivory", "umber", "slate", "crimson", "jade", "ochre", "pearl", "russet",
];

const TERMINAL_OBJECTS: &[&str] = &[
    "lantern", "gate", "standard", "key", "bridge", "bell", "chart", "seal", "arch", "loom",
];

const NOISE_SENTENCES: &[&str] = &[
    "Morning tides reach the outer shelf before the market bells ring.",
    "Caravan tolls along the coast road were unchanged this season.",
    "Surveyors mapped the northern fens without incident.",
    "Grain barges queue at the narrows when the wind turns east.",
    "Lamplighters finish their rounds well before the late watch.",
    "The winter fair returns to the lower quays every third year.",
    "Messenger pigeons avoid the cliff line in heavy weather.",
    "Salt prices held steady across the river towns.",
];

/// One edge of the fact graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub entity: String,
    pub attribute: String,
    pub value: FactValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactValue {
    Entity { name: String },
    Terminal { text: String },
}

impl FactValue {
    pub fn as_text(&self) -> &str {
        match self {
            FactValue::Entity { name } => name,
            FactValue::Terminal { text } => text,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WorldParams {
    pub seed: u64,
    pub n_tasks: usize,
    pub depth_min: u32,
    pub depth_max: u32,
    pub n_pages: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            seed: 7,
            n_tasks: 20,
            depth_min: 2,
            depth_max: 4,
            n_pages: 100,
        }
    }
}

#[derive(Debug)]
pub struct SyntheticWorld {
    pub facts: Vec<Fact>,
    pub pages: Vec<CorpusPage>,
    pub tasks: Vec<Task>,
    /// (attribute, entity) -> value; the resolution index.
    pub graph: BTreeMap<(String, String), FactValue>,
}

impl SyntheticWorld {
    /// Follows a task's dependency chain through the graph by hash
    /// lookups. The generator guarantees exactly one answer.
    pub fn resolve(&self, base_entity: &str, attrs_inner_first: &[String]) -> Option<String> {
        let mut current = base_entity.to_string();
        let mut terminal: Option<String> = None;
        for attr in attrs_inner_first {
            let value = self.graph.get(&(attr.clone(), current.clone()))?;
            match value {
                FactValue::Entity { name } => {
                    current = name.clone();
                    terminal = None;
                }
                FactValue::Terminal { text } => {
                    terminal = Some(text.clone());
                    current.clear();
                }
            }
        }
        terminal
    }
}

/// Splits a generated query back into (base entity, attributes applied
/// inner-first). The query template is
/// `What is the A_n of the A_{n-1} of ... of the A_1 of ENTITY?`.
pub fn parse_chain_query(query: &str) -> Option<(String, Vec<String>)> {
    let lower = query.trim().to_lowercase();
    let core = lower.strip_prefix("what is the ")?;
    let core = core.trim_end_matches(['?', '.', ' ']);
    let parts: Vec<&str> = core.split(" of ").collect();
    if parts.len() < 2 {
        return None;
    }
    let base = parts.last()?.trim().to_string();
    if base.is_empty() || base.contains(' ') {
        return None;
    }
    // Outer-first in the sentence; resolution applies inner-first.
    let mut attrs: Vec<String> = Vec::new();
    for part in &parts[..parts.len() - 1] {
        let attr = part.trim().strip_prefix("the ").unwrap_or(part.trim());
        if attr.is_empty() || attr.contains(' ') {
            return None;
        }
        attrs.push(attr.to_string());
    }
    attrs.reverse();
    Some((base, attrs))
}

fn fresh_name(rng: &mut SplitMix64, used: &mut BTreeSet<String>) -> String {
    loop {
        let mut name = String::new();
        for _ in 0..3 {
            name.push_str(SYLLABLES[rng.below(SYLLABLES.len())]);
        }
        if used.insert(name.clone()) {
            return name;
        }
    }
}

fn fresh_terminal(rng: &mut SplitMix64, used: &mut BTreeSet<String>) -> Option<String> {
    let capacity = TERMINAL_COLORS.len() * TERMINAL_OBJECTS.len();
    if used.len() >= capacity {
        return None;
    }
    loop {
        let text = format!(
            "{} {}",
            TERMINAL_COLORS[rng.below(TERMINAL_COLORS.len())],
            TERMINAL_OBJECTS[rng.below(TERMINAL_OBJECTS.len())]
        );
        if used.insert(text.clone()) {
            return Some(text);
        }
    }
}

/// Generates the world. Every task's chain uses fresh entities, so each
/// (attribute, entity) lookup is uniquely determined; golds are computed
/// by brute-force chain resolution and are pairwise distinct.
pub fn generate_world(params: &WorldParams) -> Result<SyntheticWorld, WorldError> {
    if params.n_tasks == 0 {
        return Err(WorldError::InvalidParams("n_tasks must be >= 1".into()));
    }
    if params.depth_min == 0 || params.depth_max > 6 || params.depth_min > params.depth_max {
        return Err(WorldError::InvalidParams(format!(
            "depth range [{}, {}] must lie within [1, 6]",
            params.depth_min, params.depth_max
        )));
    }
    if params.n_tasks > TERMINAL_COLORS.len() * TERMINAL_OBJECTS.len() {
        return Err(WorldError::Infeasible(format!(
            "{} tasks exceed the distinct answer space",
            params.n_tasks
        )));
    }

    let mut rng = SplitMix64::new(params.seed);
    let mut used_names = BTreeSet::new();
    let mut used_terminals = BTreeSet::new();
    let mut facts: Vec<Fact> = Vec::new();
    let mut graph = BTreeMap::new();
    let mut entity_order: Vec<String> = Vec::new();
    let mut tasks = Vec::new();

    for task_index in 0..params.n_tasks {
        let depth =
            params.depth_min + rng.below((params.depth_max - params.depth_min + 1) as usize) as u32;
        let chain_entities: Vec<String> = (0..depth)
            .map(|_| fresh_name(&mut rng, &mut used_names))
            .collect();
        entity_order.extend(chain_entities.iter().cloned());
        let attrs: Vec<String> = (0..depth)
            .map(|_| ATTRIBUTES[rng.below(ATTRIBUTES.len())].to_string())
            .collect();
        let gold = fresh_terminal(&mut rng, &mut used_terminals)
            .ok_or_else(|| WorldError::Infeasible("ran out of distinct terminal answers".into()))?;

        for i in 0..depth as usize {
            let value = if i + 1 < depth as usize {
                FactValue::Entity {
                    name: chain_entities[i + 1].clone(),
                }
            } else {
                FactValue::Terminal { text: gold.clone() }
            };
            let fact = Fact {
                entity: chain_entities[i].clone(),
                attribute: attrs[i].clone(),
                value,
            };
            graph.insert(
                (fact.attribute.clone(), fact.entity.clone()),
                fact.value.clone(),
            );
            facts.push(fact);
        }

        // A couple of distractor facts per chain entity.
        for entity in &chain_entities {
            let extra = 1 + rng.below(2);
            for _ in 0..extra {
                let attr = ATTRIBUTES[rng.below(ATTRIBUTES.len())].to_string();
                if graph.contains_key(&(attr.clone(), entity.clone())) {
                    continue;
                }
                let text = format!(
                    "{} {}",
                    TERMINAL_COLORS[rng.below(TERMINAL_COLORS.len())],
                    TERMINAL_OBJECTS[rng.below(TERMINAL_OBJECTS.len())]
                );
                if used_terminals.contains(&text) {
                    continue;
                }
                let fact = Fact {
                    entity: entity.clone(),
                    attribute: attr.clone(),
                    value: FactValue::Terminal { text },
                };
                graph.insert(
                    (fact.attribute.clone(), fact.entity.clone()),
                    fact.value.clone(),
                );
                facts.push(fact);
            }
        }

        // Question nests outer attribute first.
        let mut query = String::from("What is the ");
        for (i, attr) in attrs.iter().rev().enumerate() {
            if i > 0 {
                query.push_str("the ");
            }
            query.push_str(attr);
            query.push_str(" of ");
        }
        query.push_str(&chain_entities[0]);
        query.push('?');

        let mut task = Task::new(format!("t{task_index:02}"), query);
        task.instruction = "Answer with the exact value asked for, nothing else.".to_string();
        task.gold_answer = Some(gold);
        task.meta.insert("benchmark".into(), "synthetic".into());
        task.meta.insert("depth".into(), depth.to_string());
        task.meta
            .insert("base_entity".into(), chain_entities[0].clone());
        tasks.push(task);
    }

    // One page per entity stating its facts, then noise pages.
    if entity_order.len() > params.n_pages {
        return Err(WorldError::Infeasible(format!(
            "{} entities need pages but only {} pages requested",
            entity_order.len(),
            params.n_pages
        )));
    }
    let mut pages = Vec::with_capacity(params.n_pages);
    for (i, entity) in entity_order.iter().enumerate() {
        let mut text = format!(
            "Notes on {entity} from the regional register. Travelers mention {entity} in many route notes."
        );
        for fact in facts.iter().filter(|f| &f.entity == entity) {
            text.push_str(&format!(
                " The {} of {} is {}.",
                fact.attribute,
                fact.entity,
                fact.value.as_text()
            ));
        }
        text.push_str(" Its charter rests in the lower vault.");
        pages.push(CorpusPage {
            id: format!("p{i:03}"),
            url: format!("fixture://p{i:03}"),
            text,
        });
    }
    for i in entity_order.len()..params.n_pages {
        let mut text = format!("Bulletin {i:03} from the coastal almanac.");
        let count = 3 + rng.below(3);
        for _ in 0..count {
            text.push(' ');
            text.push_str(NOISE_SENTENCES[rng.below(NOISE_SENTENCES.len())]);
        }
        pages.push(CorpusPage {
            id: format!("p{i:03}"),
            url: format!("fixture://p{i:03}"),
            text,
        });
    }

    // Sanity: every task resolves to exactly its gold.
    let world = SyntheticWorld {
        facts,
        pages,
        tasks,
        graph,
    };
    for task in &world.tasks {
        let (base, attrs) = parse_chain_query(&task.query)
            .ok_or_else(|| WorldError::Infeasible("generated query failed to re-parse".into()))?;
        let resolved = world.resolve(&base, &attrs);
        if resolved.as_deref() != task.gold_answer.as_deref() {
            return Err(WorldError::Infeasible(format!(
                "task {} does not resolve to its gold answer",
                task.id
            )));
        }
    }
    Ok(world)
}
