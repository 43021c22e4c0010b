//! Symbolic rule engine that turns explanations into an auxiliary reward.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agent::RewardShaper;
use crate::error::{invalid_arg, Error, Result};
use crate::explainer::{cavi_fit, extract_explanation, ExplainerConfig, Explanation};
use crate::graph::GraphState;
use crate::nn::{ActivationConfig, PolicyParameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReasonerConfig {
    pub feature_importance_threshold: f64,
    pub edge_importance_threshold: f64,
    pub uncertainty_threshold: f64,
    pub similarity_threshold: f64,
    pub bonus: f64,
    pub penalty: f64,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        Self {
            feature_importance_threshold: 0.8,
            edge_importance_threshold: 0.8,
            uncertainty_threshold: 0.2,
            similarity_threshold: 0.8,
            bonus: 1.0,
            penalty: -1.0,
        }
    }
}

impl ReasonerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("feature_importance_threshold", self.feature_importance_threshold),
            ("edge_importance_threshold", self.edge_importance_threshold),
            ("similarity_threshold", self.similarity_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid_arg(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(self.uncertainty_threshold >= 0.0) {
            return Err(invalid_arg("uncertainty_threshold must be non-negative"));
        }
        if !(self.penalty <= 0.0 && self.bonus >= 0.0) {
            return Err(invalid_arg("expected penalty <= 0 <= bonus"));
        }
        Ok(())
    }

    fn threshold(&self, name: &str) -> Option<f64> {
        match name {
            "feature_importance_threshold" => Some(self.feature_importance_threshold),
            "edge_importance_threshold" => Some(self.edge_importance_threshold),
            "uncertainty_threshold" => Some(self.uncertainty_threshold),
            "similarity_threshold" => Some(self.similarity_threshold),
            _ => None,
        }
    }
}

/// Explanation attributes of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeContext {
    pub node: usize,
    pub feature_importance: Vec<f64>,
    pub feature_uncertainty: Vec<f64>,
    pub incident_edge_importance: f64,
    pub incident_edge_uncertainty: f64,
    pub neighbor_similarities: Vec<f64>,
}

const ATTRIBUTES: &[&str] = &[
    "max_feature_importance",
    "min_feature_importance",
    "feature_importance_0",
    "feature_importance_1",
    "max_feature_uncertainty",
    "min_feature_uncertainty",
    "feature_uncertainty_0",
    "feature_uncertainty_1",
    "incident_edge_importance",
    "incident_edge_uncertainty",
    "max_neighbor_similarity",
    "min_neighbor_similarity",
    "mean_neighbor_similarity",
];

const THRESHOLDS: &[&str] = &["feature_importance_threshold", "edge_importance_threshold", "uncertainty_threshold", "similarity_threshold"];

fn max_or_zero(v: &[f64]) -> f64 {
    v.iter().copied().reduce(f64::max).unwrap_or(0.0)
}

fn min_or_zero(v: &[f64]) -> f64 {
    v.iter().copied().reduce(f64::min).unwrap_or(0.0)
}

impl NodeContext {
    /// Value of a named attribute; empty collections read as 0.
    pub fn attribute(&self, name: &str) -> Option<f64> {
        let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
        Some(match name {
            "max_feature_importance" => max_or_zero(&self.feature_importance),
            "min_feature_importance" => min_or_zero(&self.feature_importance),
            "feature_importance_0" => at(&self.feature_importance, 0),
            "feature_importance_1" => at(&self.feature_importance, 1),
            "max_feature_uncertainty" => max_or_zero(&self.feature_uncertainty),
            "min_feature_uncertainty" => min_or_zero(&self.feature_uncertainty),
            "feature_uncertainty_0" => at(&self.feature_uncertainty, 0),
            "feature_uncertainty_1" => at(&self.feature_uncertainty, 1),
            "incident_edge_importance" => self.incident_edge_importance,
            "incident_edge_uncertainty" => self.incident_edge_uncertainty,
            "max_neighbor_similarity" => max_or_zero(&self.neighbor_similarities),
            "min_neighbor_similarity" => min_or_zero(&self.neighbor_similarities),
            "mean_neighbor_similarity" => {
                if self.neighbor_similarities.is_empty() {
                    0.0
                } else {
                    self.neighbor_similarities.iter().sum::<f64>() / self.neighbor_similarities.len() as f64
                }
            }
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn apply(self, a: f64, b: f64) -> bool {
        match self {
            Self::Lt => a < b,
            Self::Le => a <= b,
            Self::Gt => a > b,
            Self::Ge => a >= b,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Self::Lt => "<",
            Self::Le => "<=",
            Self::Gt => ">",
            Self::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Operand {
    Attribute(String),
    Threshold(String),
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Condition {
    True,
    False,
    Compare(Operand, CmpOp, Operand),
    And(Box<Condition>, Box<Condition>),
    Or(Box<Condition>, Box<Condition>),
    Not(Box<Condition>),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Attribute(n) | Self::Threshold(n) => write!(f, "{n}"),
            Self::Constant(c) => write!(f, "{c}"),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::True => write!(f, "true"),
            Self::False => write!(f, "false"),
            Self::Compare(a, op, b) => write!(f, "{a} {} {b}", op.symbol()),
            Self::And(a, b) => write!(f, "({a} AND {b})"),
            Self::Or(a, b) => write!(f, "({a} OR {b})"),
            Self::Not(a) => write!(f, "NOT {a}"),
        }
    }
}

impl Condition {
    pub fn evaluate(&self, ctx: &NodeContext, cfg: &ReasonerConfig) -> bool {
        match self {
            Self::True => true,
            Self::False => false,
            Self::Compare(a, op, b) => op.apply(operand_value(a, ctx, cfg), operand_value(b, ctx, cfg)),
            Self::And(a, b) => a.evaluate(ctx, cfg) && b.evaluate(ctx, cfg),
            Self::Or(a, b) => a.evaluate(ctx, cfg) || b.evaluate(ctx, cfg),
            Self::Not(a) => !a.evaluate(ctx, cfg),
        }
    }
}

fn operand_value(o: &Operand, ctx: &NodeContext, cfg: &ReasonerConfig) -> f64 {
    match o {
        Operand::Attribute(n) => ctx.attribute(n).expect("attribute names are checked at parse time"),
        Operand::Threshold(n) => cfg.threshold(n).expect("threshold names are checked at parse time"),
        Operand::Constant(c) => *c,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Op(CmpOp),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            '<' | '>' => {
                let eq = chars.get(i + 1) == Some(&'=');
                out.push(Token::Op(match (c, eq) {
                    ('<', false) => CmpOp::Lt,
                    ('<', true) => CmpOp::Le,
                    ('>', false) => CmpOp::Gt,
                    _ => CmpOp::Ge,
                }));
                i += if eq { 2 } else { 1 };
            }
            '≤' => {
                out.push(Token::Op(CmpOp::Le));
                i += 1;
            }
            '≥' => {
                out.push(Token::Op(CmpOp::Ge));
                i += 1;
            }
            c if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' => {
                let start = i;
                i += 1;
                while i < chars.len() {
                    let d = chars[i];
                    let exp_sign = (d == '-' || d == '+') && matches!(chars[i - 1], 'e' | 'E');
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let v: f64 = text.parse().map_err(|_| Error::Parse(format!("bad number '{text}'")))?;
                out.push(Token::Number(v));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(Error::Parse(format!("unexpected character '{other}' in condition"))),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token::Ident(s)) if s.eq_ignore_ascii_case(kw))
    }

    fn or(&mut self) -> Result<Condition> {
        let mut lhs = self.and()?;
        while self.keyword("or") {
            self.pos += 1;
            lhs = Condition::Or(Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Condition> {
        let mut lhs = self.not()?;
        while self.keyword("and") {
            self.pos += 1;
            lhs = Condition::And(Box::new(lhs), Box::new(self.not()?));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Condition> {
        if self.keyword("not") {
            self.pos += 1;
            return Ok(Condition::Not(Box::new(self.not()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Condition> {
        match self.peek().cloned() {
            Some(Token::LParen) => {
                self.pos += 1;
                let inner = self.or()?;
                if self.peek() != Some(&Token::RParen) {
                    return Err(Error::Parse("missing ')'".into()));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(Token::Ident(s)) if s.eq_ignore_ascii_case("true") => {
                self.pos += 1;
                Ok(Condition::True)
            }
            Some(Token::Ident(s)) if s.eq_ignore_ascii_case("false") => {
                self.pos += 1;
                Ok(Condition::False)
            }
            _ => {
                let lhs = self.operand()?;
                let op = match self.peek() {
                    Some(Token::Op(op)) => *op,
                    other => return Err(Error::Parse(format!("expected a comparison operator, found {other:?}"))),
                };
                self.pos += 1;
                let rhs = self.operand()?;
                Ok(Condition::Compare(lhs, op, rhs))
            }
        }
    }

    fn operand(&mut self) -> Result<Operand> {
        let tok = self.peek().cloned();
        self.pos += 1;
        match tok {
            Some(Token::Number(v)) => Ok(Operand::Constant(v)),
            Some(Token::Ident(name)) if ATTRIBUTES.contains(&name.as_str()) => Ok(Operand::Attribute(name)),
            Some(Token::Ident(name)) if THRESHOLDS.contains(&name.as_str()) => Ok(Operand::Threshold(name)),
            Some(Token::Ident(name)) => Err(Error::Parse(format!("unknown attribute or threshold '{name}'"))),
            other => Err(Error::Parse(format!("expected an operand, found {other:?}"))),
        }
    }
}

/// Parses `a > b AND NOT (c <= 0.3 OR d >= e)`-style conditions.
pub fn parse_condition(src: &str) -> Result<Condition> {
    let mut p = Parser { tokens: tokenize(src)?, pos: 0 };
    if p.tokens.is_empty() {
        return Err(Error::Parse("empty condition".into()));
    }
    let cond = p.or()?;
    if p.pos != p.tokens.len() {
        return Err(Error::Parse(format!("trailing input after condition: {:?}", &p.tokens[p.pos..])));
    }
    Ok(cond)
}

/// A rule as written in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub name: String,
    pub condition: String,
    pub action: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicRule {
    pub name: String,
    pub condition: Condition,
    pub source: String,
    pub action: f64,
}

impl SymbolicRule {
    pub fn parse(spec: &RuleSpec) -> Result<Self> {
        if !spec.action.is_finite() {
            return Err(invalid_arg(format!("rule '{}' has a non-finite action", spec.name)));
        }
        Ok(Self { name: spec.name.clone(), condition: parse_condition(&spec.condition)?, source: spec.condition.clone(), action: spec.action })
    }

    pub fn to_spec(&self) -> RuleSpec {
        RuleSpec { name: self.name.clone(), condition: self.source.clone(), action: self.action }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuleBase {
    rules: Vec<SymbolicRule>,
}

impl RuleBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_specs(specs: &[RuleSpec]) -> Result<Self> {
        let mut base = Self::new();
        for s in specs {
            base = add_rule(&base, SymbolicRule::parse(s)?)?;
        }
        Ok(base)
    }

    pub fn rules(&self) -> &[SymbolicRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn specs(&self) -> Vec<RuleSpec> {
        self.rules.iter().map(SymbolicRule::to_spec).collect()
    }
}

/// Returns `base` with `rule` appended; a duplicate name is a conflict.
pub fn add_rule(base: &RuleBase, rule: SymbolicRule) -> Result<RuleBase> {
    if base.rules.iter().any(|r| r.name == rule.name) {
        return Err(Error::Conflict(format!("a rule named '{}' already exists", rule.name)));
    }
    let mut next = base.clone();
    next.rules.push(rule);
    Ok(next)
}

pub const PROMOTE_RULE: &str = "max_feature_importance > feature_importance_threshold \
    AND incident_edge_importance > edge_importance_threshold \
    AND max_feature_uncertainty < uncertainty_threshold \
    AND incident_edge_uncertainty < uncertainty_threshold \
    AND max_neighbor_similarity > similarity_threshold";

pub const PENALIZE_RULE: &str = "max_feature_importance > feature_importance_threshold \
    AND max_neighbor_similarity <= similarity_threshold";

pub fn default_rule_specs(cfg: &ReasonerConfig) -> Vec<RuleSpec> {
    vec![
        RuleSpec { name: "promote_confident_cluster".into(), condition: PROMOTE_RULE.into(), action: cfg.bonus },
        RuleSpec { name: "penalize_isolated_importance".into(), condition: PENALIZE_RULE.into(), action: cfg.penalty },
    ]
}

pub fn default_rules(cfg: &ReasonerConfig) -> RuleBase {
    RuleBase::from_specs(&default_rule_specs(cfg)).expect("built-in rules parse")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Firing {
    pub node: usize,
    pub rule: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub r_star: f64,
    pub firings: Vec<Firing>,
}

/// Sums the actions of every rule that fires on every node.
pub fn evaluate(base: &RuleBase, contexts: &[NodeContext], cfg: &ReasonerConfig) -> Evaluation {
    let mut r_star = 0.0;
    let mut firings = Vec::new();
    for ctx in contexts {
        for rule in &base.rules {
            if rule.condition.evaluate(ctx, cfg) {
                r_star += rule.action;
                firings.push(Firing { node: ctx.node, rule: rule.name.clone(), value: rule.action });
            }
        }
    }
    Evaluation { r_star, firings }
}

/// `R_final = R + r*`.
pub fn shape_reward(base_reward: f64, r_star: f64) -> f64 {
    base_reward + r_star
}

/// `u.v / (|u||v|)`, or 0 when either vector is zero.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / (nu * nv)).clamp(-1.0, 1.0)
}

pub fn build_node_contexts(g: &GraphState, ex: &Explanation) -> Result<Vec<NodeContext>> {
    if ex.node_feature_importance.dim() != g.node_features.dim()
        || ex.node_feature_uncertainty.dim() != g.node_features.dim()
        || ex.edge_importance.len() != g.n_edges()
        || ex.edge_uncertainty.len() != g.n_edges()
    {
        return Err(invalid_arg("explanation does not match the graph's nodes and edges"));
    }
    let mut out = Vec::with_capacity(g.n_nodes());
    for v in 0..g.n_nodes() {
        let incident: Vec<usize> = g.edge_index.iter().enumerate().filter(|(_, &(s, d))| s == v || d == v).map(|(e, _)| e).collect();
        let mean = |vals: &[f64]| {
            if incident.is_empty() {
                0.0
            } else {
                incident.iter().map(|&e| vals[e]).sum::<f64>() / incident.len() as f64
            }
        };
        let own = g.node_features.row(v).to_vec();
        let neighbor_similarities = g
            .edge_index
            .iter()
            .filter(|&&(s, _)| s == v)
            .map(|&(_, d)| cosine_similarity(&own, &g.node_features.row(d).to_vec()))
            .collect();
        out.push(NodeContext {
            node: v,
            feature_importance: ex.node_feature_importance.row(v).to_vec(),
            feature_uncertainty: ex.node_feature_uncertainty.row(v).to_vec(),
            incident_edge_importance: mean(&ex.edge_importance),
            incident_edge_uncertainty: mean(&ex.edge_uncertainty),
            neighbor_similarities,
        });
    }
    Ok(out)
}

/// Thresholds plus the rule base they parameterise.
#[derive(Debug, Clone, PartialEq)]
pub struct Reasoner {
    pub cfg: ReasonerConfig,
    pub rules: RuleBase,
}

impl Reasoner {
    pub fn new(cfg: ReasonerConfig, rules: RuleBase) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, rules })
    }

    pub fn with_default_rules(cfg: ReasonerConfig) -> Result<Self> {
        let rules = default_rules(&cfg);
        Self::new(cfg, rules)
    }

    pub fn reason(&self, g: &GraphState, ex: &Explanation) -> Result<Evaluation> {
        Ok(evaluate(&self.rules, &build_node_contexts(g, ex)?, &self.cfg))
    }
}

/// Explains the current state with the live policy and scores it with the rule base.
pub struct ExplanationShaper {
    pub explainer: ExplainerConfig,
    pub reasoner: Reasoner,
    pub seed: u64,
    pub calls: usize,
}

impl ExplanationShaper {
    pub fn new(explainer: ExplainerConfig, reasoner: Reasoner, seed: u64) -> Self {
        Self { explainer, reasoner, seed, calls: 0 }
    }
}

/// Mixes a run seed with a position so each explanation gets its own noise.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = seed ^ 0xd1b5_4a32_d192_ed03;
    for x in [a, b] {
        h ^= x.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    }
    h
}

impl RewardShaper for ExplanationShaper {
    fn shaping_bonus(&mut self, graph: &GraphState, params: &PolicyParameters, act: &ActivationConfig, episode: usize, step: usize) -> Result<f64> {
        self.calls += 1;
        if self.reasoner.rules.is_empty() {
            return Ok(0.0);
        }
        let (q, _) = cavi_fit(params, act, graph, &self.explainer, derive_seed(self.seed, episode as u64, step as u64))?;
        let ex = extract_explanation(&q, graph.feature_dim())?;
        Ok(self.reasoner.reason(graph, &ex)?.r_star)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(fi: [f64; 2], ei: f64, fu: [f64; 2], eu: f64, sims: &[f64]) -> NodeContext {
        NodeContext {
            node: 0,
            feature_importance: fi.to_vec(),
            feature_uncertainty: fu.to_vec(),
            incident_edge_importance: ei,
            incident_edge_uncertainty: eu,
            neighbor_similarities: sims.to_vec(),
        }
    }

    #[test]
    fn default_rule_examples() {
        let cfg = ReasonerConfig::default();
        let base = default_rules(&cfg);
        let promote = ctx([0.9, 0.9], 0.85, [0.1, 0.1], 0.1, &[0.9, 0.85, 0.9]);
        assert_eq!(evaluate(&base, &[promote], &cfg).r_star, 1.0);
        let penal = ctx([0.9, 0.2], 0.1, [0.7, 0.9], 0.5, &[0.2, 0.1, 0.3]);
        assert_eq!(evaluate(&base, &[penal], &cfg).r_star, -1.0);
        let quiet = ctx([0.5, 0.5], 0.9, [0.0, 0.0], 0.0, &[0.1, 0.1, 0.1]);
        assert_eq!(evaluate(&base, &[quiet], &cfg).r_star, 0.0);
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[0.3, 0.4], &[0.3, 0.4]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
        assert!((cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn parser_roundtrip_and_errors() {
        let c = parse_condition("NOT (max_feature_importance >= 0.5 OR incident_edge_importance < -1e-3) and true").unwrap();
        let again = parse_condition(&c.to_string()).unwrap();
        assert_eq!(c, again);
        assert!(matches!(parse_condition("bogus_attr > 1"), Err(Error::Parse(_))));
        assert!(matches!(parse_condition("max_feature_importance >"), Err(Error::Parse(_))));
        assert!(matches!(parse_condition("(true"), Err(Error::Parse(_))));
        assert!(matches!(parse_condition(""), Err(Error::Parse(_))));
        assert!(matches!(parse_condition("true true"), Err(Error::Parse(_))));
        assert!(parse_condition("max_neighbor_similarity ≤ similarity_threshold").is_ok());
    }

    #[test]
    fn add_rule_conflict() {
        let rule = SymbolicRule::parse(&RuleSpec { name: "r".into(), condition: "true".into(), action: 2.0 }).unwrap();
        let base = add_rule(&RuleBase::new(), rule.clone()).unwrap();
        assert_eq!(base.len(), 1);
        assert!(matches!(add_rule(&base, rule), Err(Error::Conflict(_))));
        assert_eq!(base.len(), 1);
    }

    #[test]
    fn shaping_examples() {
        assert_eq!(shape_reward(2.0, -1.0), 1.0);
        assert_eq!(shape_reward(-3.25, 0.0), -3.25);
        assert_eq!(shape_reward(-8.0, 2.0), -6.0);
    }
}
