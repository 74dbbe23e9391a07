//! Partial order over behaviors and the graded rank function over behavior
//! combinations.
//!
//! Behaviors are declared in *levels*: every behavior of level `k` is strictly
//! more important than every behavior of level `k - 1`, and behaviors sharing a
//! level are incomparable. The level index is the behavior rank.
//!
//! A combination (the set of behaviors linking one user to one item) is ranked
//! through its [`RankCountVector`]: the number of behaviors it holds at each
//! rank, read from the highest rank downward. Two combinations are compared by
//! the first rank at which their counts differ; combinations with identical
//! vectors are incomparable and share a rank.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest behavior set for which the full subset universe is enumerated.
pub const MAX_ENUMERATED_BEHAVIORS: usize = 20;

/// Hard limit imposed by the bitmask representation of [`Combination`].
pub const MAX_BEHAVIORS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OrderError {
    #[error("behavior order declares no levels")]
    EmptyOrder,
    #[error("level {0} is empty")]
    EmptyLevel(usize),
    #[error("behavior `{0}` is declared more than once")]
    DuplicateBehavior(String),
    #[error("unknown behavior `{0}`")]
    UnknownBehavior(String),
    #[error("combination universe is empty")]
    EmptyUniverse,
    #[error("combination is empty")]
    EmptyCombination,
    #[error("too many behaviors: {got} (limit {limit})")]
    TooManyBehaviors { got: usize, limit: usize },
}

/// A set of behaviors, stored as a bitmask over the behavior indices of a
/// [`BehaviorOrder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Combination(pub u64);

impl Combination {
    pub const EMPTY: Combination = Combination(0);

    pub fn singleton(behavior: usize) -> Self {
        Combination(1 << behavior)
    }

    pub fn with(self, behavior: usize) -> Self {
        Combination(self.0 | (1 << behavior))
    }

    pub fn contains(self, behavior: usize) -> bool {
        self.0 & (1 << behavior) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_subset_of(self, other: Combination) -> bool {
        self.0 & !other.0 == 0
    }

    /// Behavior indices in ascending order.
    pub fn members(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..MAX_BEHAVIORS).filter(move |b| bits & (1u64 << b) != 0)
    }
}

/// Outcome of comparing two combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    Less,
    Greater,
    Equal,
    Incomparable,
}

/// Behaviors grouped into levels of ascending importance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<String>>", into = "Vec<Vec<String>>")]
pub struct BehaviorOrder {
    behaviors: Vec<String>,
    levels: Vec<Vec<String>>,
    /// `rank[b]` is the level (1-based) of behavior index `b`.
    rank: Vec<usize>,
    index: HashMap<String, usize>,
}

impl BehaviorOrder {
    /// Validates a level declaration. Behavior indices follow declaration
    /// order, lowest level first.
    pub fn new<S: AsRef<str>>(levels: &[Vec<S>]) -> Result<Self, OrderError> {
        if levels.is_empty() {
            return Err(OrderError::EmptyOrder);
        }
        let mut behaviors = Vec::new();
        let mut rank = Vec::new();
        let mut index = HashMap::new();
        let mut owned_levels = Vec::with_capacity(levels.len());
        for (k, level) in levels.iter().enumerate() {
            if level.is_empty() {
                return Err(OrderError::EmptyLevel(k + 1));
            }
            let mut owned = Vec::with_capacity(level.len());
            for name in level {
                let name = name.as_ref().to_string();
                if index.insert(name.clone(), behaviors.len()).is_some() {
                    return Err(OrderError::DuplicateBehavior(name));
                }
                behaviors.push(name.clone());
                rank.push(k + 1);
                owned.push(name);
            }
            owned_levels.push(owned);
        }
        if behaviors.len() > MAX_BEHAVIORS {
            return Err(OrderError::TooManyBehaviors { got: behaviors.len(), limit: MAX_BEHAVIORS });
        }
        Ok(BehaviorOrder { behaviors, levels: owned_levels, rank, index })
    }

    pub fn behaviors(&self) -> &[String] {
        &self.behaviors
    }

    pub fn levels(&self) -> &[Vec<String>] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.behaviors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.behaviors.is_empty()
    }

    /// Highest behavior rank, i.e. the number of levels.
    pub fn max_rank(&self) -> usize {
        self.levels.len()
    }

    pub fn index_of(&self, name: &str) -> Result<usize, OrderError> {
        self.index.get(name).copied().ok_or_else(|| OrderError::UnknownBehavior(name.to_string()))
    }

    pub fn name(&self, behavior: usize) -> &str {
        &self.behaviors[behavior]
    }

    /// Rank of a behavior by name.
    pub fn behavior_rank(&self, name: &str) -> Result<usize, OrderError> {
        self.index_of(name).map(|b| self.rank[b])
    }

    /// Rank of a behavior by index.
    pub fn rank_of(&self, behavior: usize) -> usize {
        self.rank[behavior]
    }

    pub fn combination<S: AsRef<str>>(&self, names: &[S]) -> Result<Combination, OrderError> {
        let mut c = Combination::EMPTY;
        for name in names {
            c = c.with(self.index_of(name.as_ref())?);
        }
        Ok(c)
    }

    /// Every behavior.
    pub fn full(&self) -> Combination {
        if self.behaviors.len() == 64 {
            Combination(u64::MAX)
        } else {
            Combination((1u64 << self.behaviors.len()) - 1)
        }
    }

    /// All `2^K - 1` non-empty combinations.
    pub fn all_combinations(&self) -> Result<Vec<Combination>, OrderError> {
        if self.len() > MAX_ENUMERATED_BEHAVIORS {
            return Err(OrderError::TooManyBehaviors { got: self.len(), limit: MAX_ENUMERATED_BEHAVIORS });
        }
        Ok((1..(1u64 << self.len())).map(Combination).collect())
    }

    fn check(&self, c: Combination) -> Result<(), OrderError> {
        if c.is_empty() {
            return Err(OrderError::EmptyCombination);
        }
        if !c.is_subset_of(self.full()) {
            let stray = c.members().find(|&b| b >= self.len()).unwrap_or_default();
            return Err(OrderError::UnknownBehavior(format!("#{stray}")));
        }
        Ok(())
    }

    /// Number of behaviors of rank `k` in `c`.
    pub fn count_at_rank(&self, c: Combination, k: usize) -> usize {
        c.members().filter(|&b| self.rank[b] == k).count()
    }

    pub fn rank_counts(&self, c: Combination) -> RankCountVector {
        let mut counts = vec![0u32; self.max_rank()];
        for b in c.members() {
            counts[self.max_rank() - self.rank[b]] += 1;
        }
        RankCountVector(counts)
    }

    /// Human-readable form, members joined by `+` in declaration order.
    pub fn display(&self, c: Combination) -> String {
        c.members().map(|b| self.behaviors[b].as_str()).collect::<Vec<_>>().join("+")
    }

    /// Parses the `display` form.
    pub fn parse_combination(&self, s: &str) -> Result<Combination, OrderError> {
        let names: Vec<&str> = s.split('+').map(str::trim).filter(|n| !n.is_empty()).collect();
        let c = self.combination(&names)?;
        if c.is_empty() {
            return Err(OrderError::EmptyCombination);
        }
        Ok(c)
    }

    /// Compares two combinations by walking the rank levels from the highest
    /// down: the first level whose behavior counts differ decides, and equal
    /// counts at every level make distinct sets incomparable.
    pub fn compare(&self, a: Combination, b: Combination) -> Result<Comparison, OrderError> {
        self.check(a)?;
        self.check(b)?;
        if a == b {
            return Ok(Comparison::Equal);
        }
        let mut k = self.max_rank();
        loop {
            let fa = self.count_at_rank(a, k);
            let fb = self.count_at_rank(b, k);
            if fa < fb {
                return Ok(Comparison::Less);
            }
            if fb < fa {
                return Ok(Comparison::Greater);
            }
            if k == 1 {
                return Ok(Comparison::Incomparable);
            }
            k -= 1;
        }
    }

    /// Name-based form of [`BehaviorOrder::compare`].
    pub fn compare_names<S: AsRef<str>>(&self, a: &[S], b: &[S]) -> Result<Comparison, OrderError> {
        let a = self.combination(a)?;
        let b = self.combination(b)?;
        self.compare(a, b)
    }
}

impl TryFrom<Vec<Vec<String>>> for BehaviorOrder {
    type Error = OrderError;

    fn try_from(levels: Vec<Vec<String>>) -> Result<Self, Self::Error> {
        BehaviorOrder::new(&levels)
    }
}

impl From<BehaviorOrder> for Vec<Vec<String>> {
    fn from(order: BehaviorOrder) -> Self {
        order.levels
    }
}

/// Counts of behaviors per rank, highest rank first. Lexicographic order on
/// these vectors is the combination order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RankCountVector(pub Vec<u32>);

impl RankCountVector {
    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }
}

/// Which combinations receive a rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankUniverse {
    /// Every non-empty subset of the behavior set.
    #[default]
    AllSubsets,
    /// Only combinations observed in the interaction data.
    Observed,
}

/// The graded rank function over a universe of combinations.
#[derive(Debug, Clone)]
pub struct CombinationRank {
    order: BehaviorOrder,
    table: BTreeMap<Combination, u32>,
    classes: Vec<Vec<Combination>>,
}

impl CombinationRank {
    /// Groups the universe into classes of identical rank-count vectors and
    /// numbers the classes 1..n in ascending vector order.
    pub fn build<I>(order: &BehaviorOrder, universe: I) -> Result<Self, OrderError>
    where
        I: IntoIterator<Item = Combination>,
    {
        let mut groups: BTreeMap<RankCountVector, BTreeSet<Combination>> = BTreeMap::new();
        for c in universe {
            order.check(c)?;
            groups.entry(order.rank_counts(c)).or_default().insert(c);
        }
        if groups.is_empty() {
            return Err(OrderError::EmptyUniverse);
        }
        let mut table = BTreeMap::new();
        let mut classes = Vec::with_capacity(groups.len());
        for (rank, (_, members)) in groups.into_iter().enumerate() {
            for &c in &members {
                table.insert(c, rank as u32 + 1);
            }
            classes.push(members.into_iter().collect());
        }
        Ok(CombinationRank { order: order.clone(), table, classes })
    }

    /// Ranks every non-empty subset of the behavior set.
    pub fn over_all_subsets(order: &BehaviorOrder) -> Result<Self, OrderError> {
        Self::build(order, order.all_combinations()?)
    }

    pub fn order(&self) -> &BehaviorOrder {
        &self.order
    }

    pub fn rank(&self, c: Combination) -> Option<u32> {
        self.table.get(&c).copied()
    }

    pub fn rank_of_names<S: AsRef<str>>(&self, names: &[S]) -> Result<Option<u32>, OrderError> {
        Ok(self.rank(self.order.combination(names)?))
    }

    /// Combinations and their ranks, ordered by combination bitmask.
    pub fn table(&self) -> &BTreeMap<Combination, u32> {
        &self.table
    }

    /// Equivalence classes; `classes()[r - 1]` holds the combinations of rank `r`.
    pub fn classes(&self) -> &[Vec<Combination>] {
        &self.classes
    }

    /// Number of distinct ranks.
    pub fn max_rank(&self) -> u32 {
        self.classes.len() as u32
    }
}

impl fmt::Display for CombinationRank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (r, class) in self.classes.iter().enumerate() {
            let names: Vec<String> = class.iter().map(|&c| format!("{{{}}}", self.order.display(c))).collect();
            writeln!(f, "{}\t{}", r + 1, names.join(" "))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfb() -> BehaviorOrder {
        BehaviorOrder::new(&[vec!["click"], vec!["favor"], vec!["buy"]]).unwrap()
    }

    fn tenrec() -> BehaviorOrder {
        BehaviorOrder::new(&[vec!["click"], vec!["like"], vec!["share", "follow"]]).unwrap()
    }

    #[test]
    fn behavior_ranks_follow_levels() {
        let o = cfb();
        assert_eq!(o.behavior_rank("click").unwrap(), 1);
        assert_eq!(o.behavior_rank("favor").unwrap(), 2);
        assert_eq!(o.behavior_rank("buy").unwrap(), 3);

        let single = BehaviorOrder::new(&[vec!["click"]]).unwrap();
        assert_eq!(single.behavior_rank("click").unwrap(), 1);

        let t = tenrec();
        assert_eq!(t.behavior_rank("share").unwrap(), 3);
        assert_eq!(t.behavior_rank("follow").unwrap(), 3);
    }

    #[test]
    fn invalid_declarations() {
        let empty: [Vec<&str>; 0] = [];
        assert_eq!(BehaviorOrder::new(&empty), Err(OrderError::EmptyOrder));
        assert_eq!(BehaviorOrder::new(&[vec!["a"], vec![]]), Err(OrderError::EmptyLevel(2)));
        assert_eq!(BehaviorOrder::new(&[vec!["a"], vec!["b", "a"]]), Err(OrderError::DuplicateBehavior("a".into())));
    }

    #[test]
    fn comparisons() {
        let o = cfb();
        assert_eq!(o.compare_names(&["click", "favor"], &["buy"]).unwrap(), Comparison::Less);
        assert_eq!(o.compare_names(&["buy"], &["click", "favor"]).unwrap(), Comparison::Greater);
        let all = ["click", "favor", "buy"];
        assert_eq!(o.compare_names(&all, &all).unwrap(), Comparison::Equal);
        assert_eq!(tenrec().compare_names(&["share"], &["follow"]).unwrap(), Comparison::Incomparable);
        assert_eq!(o.compare_names(&["click"], &["cart"]), Err(OrderError::UnknownBehavior("cart".into())));
    }

    #[test]
    fn rank_counts_highest_first() {
        let t = tenrec();
        let c = t.combination(&["click", "share", "follow"]).unwrap();
        assert_eq!(t.rank_counts(c), RankCountVector(vec![2, 0, 1]));
        assert_eq!(t.rank_counts(c).total(), 3);
    }

    #[test]
    fn three_level_ranks() {
        let o = cfb();
        let r = CombinationRank::over_all_subsets(&o).unwrap();
        let expect: [(&[&str], u32); 7] = [
            (&["click"], 1),
            (&["favor"], 2),
            (&["click", "favor"], 3),
            (&["buy"], 4),
            (&["click", "buy"], 5),
            (&["favor", "buy"], 6),
            (&["click", "favor", "buy"], 7),
        ];
        for (names, rank) in expect {
            assert_eq!(r.rank_of_names(names).unwrap(), Some(rank), "{names:?}");
        }
        assert_eq!(r.max_rank(), 7);
    }

    #[test]
    fn single_behavior_universe() {
        let o = BehaviorOrder::new(&[vec!["click"]]).unwrap();
        let r = CombinationRank::over_all_subsets(&o).unwrap();
        assert_eq!(r.rank_of_names(&["click"]).unwrap(), Some(1));
        assert_eq!(r.classes().len(), 1);
    }

    #[test]
    fn tied_behaviors_share_rank() {
        let t = tenrec();
        let r = CombinationRank::over_all_subsets(&t).unwrap();
        assert_eq!(r.rank_of_names(&["share"]).unwrap(), r.rank_of_names(&["follow"]).unwrap());
        assert_eq!(r.classes().len(), 11);
    }

    #[test]
    fn observed_universe_is_compressed() {
        let o = cfb();
        let universe = [o.combination(&["click"]).unwrap(), o.combination(&["click", "buy"]).unwrap()];
        let r = CombinationRank::build(&o, universe).unwrap();
        assert_eq!(r.rank(universe[0]), Some(1));
        assert_eq!(r.rank(universe[1]), Some(2));
        assert_eq!(r.rank(o.combination(&["buy"]).unwrap()), None);
    }

    #[test]
    fn empty_universe_and_unknown_members() {
        let o = cfb();
        assert!(matches!(CombinationRank::build(&o, []), Err(OrderError::EmptyUniverse)));
        assert!(matches!(CombinationRank::build(&o, [Combination(0b1000)]), Err(OrderError::UnknownBehavior(_))));
        assert!(matches!(CombinationRank::build(&o, [Combination::EMPTY]), Err(OrderError::EmptyCombination)));
    }

    #[test]
    fn display_round_trip() {
        let o = cfb();
        let c = o.combination(&["buy", "click"]).unwrap();
        assert_eq!(o.display(c), "click+buy");
        assert_eq!(o.parse_combination("click+buy").unwrap(), c);
    }

    #[test]
    fn serde_as_level_lists() {
        let o = tenrec();
        let json = serde_json::to_string(&o).unwrap();
        assert_eq!(json, r#"[["click"],["like"],["share","follow"]]"#);
        let back: BehaviorOrder = serde_json::from_str(&json).unwrap();
        assert_eq!(back, o);
        assert!(serde_json::from_str::<BehaviorOrder>(r#"[["a"],["a"]]"#).is_err());
    }
}
