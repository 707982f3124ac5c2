//! Finite-domain soft constraints, soft constraint problems and the shared
//! store.
//!
//! A constraint holds a dense table from value tuples over its scope to
//! semiring values; tables are indexed by a mixed-radix encoding over the
//! domain in declared variable order, so totality is guaranteed by
//! construction and projection is index arithmetic. All operations are pure:
//! store updates return new stores.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::semiring::{Semiring, SemiringError, SemiringValue};
use crate::AgentId;

/// Upper bound on dense table size; combination at desk scale stays far
/// below this, anything larger is a malformed input.
const MAX_TABLE_ENTRIES: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConstraintError {
    #[error(transparent)]
    Semiring(#[from] SemiringError),
    #[error("constraints belong to incompatible constraint systems")]
    SystemMismatch,
    #[error("scopes differ: {{{0}}} vs {{{1}}}")]
    ScopeMismatch(String, String),
    #[error("domain must be non-empty")]
    EmptyDomain,
    #[error("duplicate domain value `{0}`")]
    DuplicateDomainValue(String),
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("variable index {0} is not part of the system")]
    UnknownVariable(usize),
    #[error("table has {got} entries, scope requires {expected}")]
    BadTableSize { expected: usize, got: usize },
    #[error("value for tuple #{index} is not from the system's semiring")]
    ForeignValue { index: usize },
    #[error("constraint table would exceed {MAX_TABLE_ENTRIES} entries")]
    TableTooLarge,
    #[error("renaming maps two scope variables to `{0}`")]
    RenameCollision(String),
}

/// Index of a variable in its constraint system's ordered variable list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A soft constraint system: the semiring, the shared finite domain and the
/// ordered variable list.
///
/// Systems are immutable; hiding-operator freshness is modelled by deriving
/// an extended system with one more variable. Two systems are compatible
/// when they agree on semiring and domain and one variable list is a prefix
/// of the other, which is exactly the shape produced by extension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintSystem {
    ring: Semiring,
    domain: Vec<String>,
    vars: Vec<String>,
}

impl ConstraintSystem {
    pub fn new(
        ring: Semiring,
        domain: Vec<String>,
        vars: Vec<String>,
    ) -> Result<Arc<Self>, ConstraintError> {
        if domain.is_empty() {
            return Err(ConstraintError::EmptyDomain);
        }
        for (i, d) in domain.iter().enumerate() {
            if domain[..i].contains(d) {
                return Err(ConstraintError::DuplicateDomainValue(d.clone()));
            }
        }
        for (i, v) in vars.iter().enumerate() {
            if vars[..i].contains(v) {
                return Err(ConstraintError::DuplicateVariable(v.clone()));
            }
        }
        Ok(Arc::new(ConstraintSystem { ring, domain, vars }))
    }

    pub fn ring(&self) -> Semiring {
        self.ring
    }

    pub fn domain(&self) -> &[String] {
        &self.domain
    }

    pub fn domain_size(&self) -> usize {
        self.domain.len()
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn var(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v == name).map(VarId)
    }

    pub fn var_name(&self, id: VarId) -> &str {
        &self.vars[id.0]
    }

    pub fn domain_index(&self, value: &str) -> Option<usize> {
        self.domain.iter().position(|d| d == value)
    }

    /// Derives a system with one extra variable. The name is expected to be
    /// minted by the caller from the reserved `%` namespace, which the
    /// surface syntax cannot produce.
    pub fn extended(self: &Arc<Self>, name: String) -> Result<(Arc<Self>, VarId), ConstraintError> {
        if self.vars.contains(&name) {
            return Err(ConstraintError::DuplicateVariable(name));
        }
        let mut vars = self.vars.clone();
        vars.push(name);
        let id = VarId(vars.len() - 1);
        Ok((
            Arc::new(ConstraintSystem {
                ring: self.ring,
                domain: self.domain.clone(),
                vars,
            }),
            id,
        ))
    }

    /// Compatible = same semiring and domain, variable lists in a prefix
    /// relation (one system extends the other).
    pub fn compatible(&self, other: &ConstraintSystem) -> bool {
        self.ring == other.ring && self.domain == other.domain && {
            let (short, long) = if self.vars.len() <= other.vars.len() {
                (&self.vars, &other.vars)
            } else {
                (&other.vars, &self.vars)
            };
            long[..short.len()] == short[..]
        }
    }
}

fn unify_systems(
    a: &Arc<ConstraintSystem>,
    b: &Arc<ConstraintSystem>,
) -> Result<Arc<ConstraintSystem>, ConstraintError> {
    if Arc::ptr_eq(a, b) {
        return Ok(a.clone());
    }
    if !a.compatible(b) {
        return Err(ConstraintError::SystemMismatch);
    }
    Ok(if a.vars().len() >= b.vars().len() {
        a.clone()
    } else {
        b.clone()
    })
}

/// A soft constraint: an ordered scope plus a total table from value tuples
/// to semiring values. The scope is kept sorted by the system's variable
/// order; an empty scope is a single semiring value.
#[derive(Debug, Clone)]
pub struct SoftConstraint {
    system: Arc<ConstraintSystem>,
    scope: Vec<VarId>,
    table: Vec<SemiringValue>,
}

fn table_len(domain: usize, arity: usize) -> Result<usize, ConstraintError> {
    let mut len: usize = 1;
    for _ in 0..arity {
        len = len
            .checked_mul(domain)
            .ok_or(ConstraintError::TableTooLarge)?;
        if len > MAX_TABLE_ENTRIES {
            return Err(ConstraintError::TableTooLarge);
        }
    }
    Ok(len)
}

fn digits_of(mut index: usize, radix: usize, arity: usize) -> Vec<usize> {
    let mut digits = vec![0; arity];
    for slot in digits.iter_mut().rev() {
        *slot = index % radix;
        index /= radix;
    }
    digits
}

fn index_of(digits: &[usize], radix: usize) -> usize {
    digits.iter().fold(0, |acc, d| acc * radix + d)
}

impl SoftConstraint {
    /// Builds a constraint from a scope given in any order and a table whose
    /// tuples follow that order; the result is canonicalized to the system's
    /// variable order.
    pub fn new(
        system: Arc<ConstraintSystem>,
        scope: Vec<VarId>,
        table: Vec<SemiringValue>,
    ) -> Result<Self, ConstraintError> {
        for (i, v) in scope.iter().enumerate() {
            if v.0 >= system.vars().len() {
                return Err(ConstraintError::UnknownVariable(v.0));
            }
            if scope[..i].contains(v) {
                return Err(ConstraintError::DuplicateVariable(
                    system.var_name(*v).to_string(),
                ));
            }
        }
        let radix = system.domain_size();
        let expected = table_len(radix, scope.len())?;
        if table.len() != expected {
            return Err(ConstraintError::BadTableSize {
                expected,
                got: table.len(),
            });
        }
        for (index, v) in table.iter().enumerate() {
            if v.ring() != system.ring() {
                return Err(ConstraintError::ForeignValue { index });
            }
        }
        let mut sorted = scope.clone();
        sorted.sort();
        if sorted == scope {
            return Ok(SoftConstraint {
                system,
                scope,
                table,
            });
        }
        // Permute the table into canonical scope order.
        let positions: Vec<usize> = scope
            .iter()
            .map(|v| sorted.iter().position(|s| s == v).unwrap())
            .collect();
        let mut canon = table.clone();
        for (orig_index, value) in table.iter().enumerate() {
            let orig_digits = digits_of(orig_index, radix, scope.len());
            let mut canon_digits = vec![0; scope.len()];
            for (orig_pos, canon_pos) in positions.iter().enumerate() {
                canon_digits[*canon_pos] = orig_digits[orig_pos];
            }
            canon[index_of(&canon_digits, radix)] = *value;
        }
        Ok(SoftConstraint {
            system,
            scope: sorted,
            table: canon,
        })
    }

    /// The empty-scope constraint holding a single value.
    pub fn constant(
        system: Arc<ConstraintSystem>,
        value: SemiringValue,
    ) -> Result<Self, ConstraintError> {
        SoftConstraint::new(system, Vec::new(), vec![value])
    }

    /// The all-one constraint over the given scope (the unit of combination
    /// when the scope is empty).
    pub fn all_one(
        system: Arc<ConstraintSystem>,
        scope: Vec<VarId>,
    ) -> Result<Self, ConstraintError> {
        let one = system.ring().one();
        let len = table_len(system.domain_size(), scope.len())?;
        SoftConstraint::new(system, scope, vec![one; len])
    }

    pub fn system(&self) -> &Arc<ConstraintSystem> {
        &self.system
    }

    pub fn scope(&self) -> &[VarId] {
        &self.scope
    }

    pub fn table(&self) -> &[SemiringValue] {
        &self.table
    }

    /// Looks up the value of one tuple, given as domain indices in scope
    /// order.
    pub fn value_at(&self, tuple: &[usize]) -> SemiringValue {
        debug_assert_eq!(tuple.len(), self.scope.len());
        self.table[index_of(tuple, self.system.domain_size())]
    }

    pub fn single_value(&self) -> Option<SemiringValue> {
        if self.scope.is_empty() {
            Some(self.table[0])
        } else {
            None
        }
    }

    /// Combination: union scope, pointwise multiplication of the projected
    /// lookups.
    pub fn combine(&self, other: &SoftConstraint) -> Result<SoftConstraint, ConstraintError> {
        let system = unify_systems(&self.system, &other.system)?;
        let radix = system.domain_size();
        let mut union = self.scope.clone();
        for v in &other.scope {
            if !union.contains(v) {
                union.push(*v);
            }
        }
        union.sort();
        let positions = |scope: &[VarId]| -> Vec<usize> {
            scope
                .iter()
                .map(|v| union.iter().position(|u| u == v).unwrap())
                .collect()
        };
        let (left_pos, right_pos) = (positions(&self.scope), positions(&other.scope));
        let len = table_len(radix, union.len())?;
        let mut table = Vec::with_capacity(len);
        let mut left_tuple = vec![0; self.scope.len()];
        let mut right_tuple = vec![0; other.scope.len()];
        for index in 0..len {
            let digits = digits_of(index, radix, union.len());
            for (slot, pos) in left_tuple.iter_mut().zip(&left_pos) {
                *slot = digits[*pos];
            }
            for (slot, pos) in right_tuple.iter_mut().zip(&right_pos) {
                *slot = digits[*pos];
            }
            let value = self
                .value_at(&left_tuple)
                .times(&other.value_at(&right_tuple))
                .expect("same system implies same semiring");
            table.push(value);
        }
        SoftConstraint::new(system, union, table)
    }

    /// Projection onto `keep`: variables outside the scope are ignored,
    /// eliminated variables are folded with the additive operation.
    pub fn project(&self, keep: &[VarId]) -> SoftConstraint {
        let kept: Vec<VarId> = self
            .scope
            .iter()
            .copied()
            .filter(|v| keep.contains(v))
            .collect();
        if kept == self.scope {
            return self.clone();
        }
        let radix = self.system.domain_size();
        let kept_pos: Vec<usize> = kept
            .iter()
            .map(|v| self.scope.iter().position(|s| s == v).unwrap())
            .collect();
        let len = table_len(radix, kept.len()).expect("projection shrinks the table");
        let zero = self.system.ring().zero();
        let mut table = vec![zero; len];
        for (index, value) in self.table.iter().enumerate() {
            let digits = digits_of(index, radix, self.scope.len());
            let target: Vec<usize> = kept_pos.iter().map(|p| digits[*p]).collect();
            let slot = &mut table[index_of(&target, radix)];
            *slot = slot.plus(value).expect("same semiring");
        }
        SoftConstraint {
            system: self.system.clone(),
            scope: kept,
            table,
        }
    }

    /// Best level of the constraint alone: the additive fold of its table,
    /// i.e. the value of its projection to the empty scope.
    pub fn blevel(&self) -> SemiringValue {
        self.project(&[]).table[0]
    }

    /// Pointwise order on identical scopes.
    pub fn leq(&self, other: &SoftConstraint) -> Result<bool, ConstraintError> {
        unify_systems(&self.system, &other.system)?;
        if self.scope != other.scope {
            return Err(ConstraintError::ScopeMismatch(
                self.scope_names().join(","),
                other.scope_names().join(","),
            ));
        }
        for (a, b) in self.table.iter().zip(&other.table) {
            if !a.leq(b)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Strict pointwise order: `leq` and not equal.
    pub fn lt(&self, other: &SoftConstraint) -> Result<bool, ConstraintError> {
        Ok(self.leq(other)? && self.table != other.table)
    }

    /// Re-scopes the constraint under a variable renaming. The table is
    /// permuted so tuples keep their values; a renaming that collapses two
    /// scope variables is rejected (no diagonal constraints).
    pub fn rename(
        &self,
        map: &BTreeMap<VarId, VarId>,
        system: &Arc<ConstraintSystem>,
    ) -> Result<SoftConstraint, ConstraintError> {
        let target = unify_systems(&self.system, system)?;
        let new_scope: Vec<VarId> = self
            .scope
            .iter()
            .map(|v| map.get(v).copied().unwrap_or(*v))
            .collect();
        for (i, v) in new_scope.iter().enumerate() {
            if v.0 >= target.vars().len() {
                return Err(ConstraintError::UnknownVariable(v.0));
            }
            if new_scope[..i].contains(v) {
                return Err(ConstraintError::RenameCollision(
                    target.var_name(*v).to_string(),
                ));
            }
        }
        if new_scope == self.scope && Arc::ptr_eq(&target, &self.system) {
            return Ok(self.clone());
        }
        SoftConstraint::new(target, new_scope, self.table.clone())
    }

    pub fn scope_names(&self) -> Vec<String> {
        self.scope
            .iter()
            .map(|v| self.system.var_name(*v).to_string())
            .collect()
    }

    /// Iterates rows as (tuple of domain values, value) in table order.
    pub fn rows(&self) -> impl Iterator<Item = (Vec<&str>, SemiringValue)> + '_ {
        let radix = self.system.domain_size();
        (0..self.table.len()).map(move |index| {
            let digits = digits_of(index, radix, self.scope.len());
            let tuple: Vec<&str> = digits
                .iter()
                .map(|d| self.system.domain()[*d].as_str())
                .collect();
            (tuple, self.table[index])
        })
    }
}

impl PartialEq for SoftConstraint {
    /// Structural equality: same semiring and domain, same scope variable
    /// names, same table. The system's variable-list epoch is irrelevant.
    fn eq(&self, other: &Self) -> bool {
        self.system.ring() == other.system.ring()
            && self.system.domain() == other.system.domain()
            && self.scope_names() == other.scope_names()
            && self.table == other.table
    }
}

impl Eq for SoftConstraint {}

impl fmt::Display for SoftConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "on ({})", self.scope_names().join(", "))?;
        let rows: Vec<String> = self
            .rows()
            .map(|(t, v)| format!("({}) -> {}", t.join(" "), v))
            .collect();
        write!(f, " {{ {} }}", rows.join(", "))
    }
}

/// A soft constraint satisfaction problem: a set of constraints sharing one
/// system, plus the variables of interest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scsp {
    system: Arc<ConstraintSystem>,
    constraints: Vec<SoftConstraint>,
    of_interest: Vec<VarId>,
}

impl Scsp {
    pub fn new(
        system: Arc<ConstraintSystem>,
        constraints: Vec<SoftConstraint>,
        of_interest: Vec<VarId>,
    ) -> Result<Self, ConstraintError> {
        let mut system = system;
        for c in &constraints {
            system = unify_systems(&system, c.system())?;
        }
        let mut of_interest = of_interest;
        of_interest.sort();
        of_interest.dedup();
        Ok(Scsp {
            system,
            constraints,
            of_interest,
        })
    }

    pub fn constraints(&self) -> &[SoftConstraint] {
        &self.constraints
    }

    pub fn of_interest(&self) -> &[VarId] {
        &self.of_interest
    }

    pub fn system(&self) -> &Arc<ConstraintSystem> {
        &self.system
    }

    /// Combines all constraints, then projects onto the variables of
    /// interest. An empty constraint set folds to the all-one empty-scope
    /// constraint.
    pub fn solution(&self) -> Result<SoftConstraint, ConstraintError> {
        let mut acc = SoftConstraint::all_one(self.system.clone(), Vec::new())?;
        for c in &self.constraints {
            acc = acc.combine(c)?;
        }
        Ok(acc.project(&self.of_interest))
    }

    /// Best level of consistency: the solution projected to the empty scope.
    pub fn blevel(&self) -> Result<SemiringValue, ConstraintError> {
        Ok(self.solution()?.blevel())
    }
}

/// The shared constraint store: the combination of everything told so far,
/// with per-agent sections kept for reporting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Store {
    system: Arc<ConstraintSystem>,
    sections: BTreeMap<Option<AgentId>, Vec<SoftConstraint>>,
    combination: SoftConstraint,
}

impl Store {
    pub fn new(system: Arc<ConstraintSystem>) -> Self {
        let combination =
            SoftConstraint::all_one(system.clone(), Vec::new()).expect("empty scope table");
        Store {
            system,
            sections: BTreeMap::new(),
            combination,
        }
    }

    pub fn system(&self) -> &Arc<ConstraintSystem> {
        &self.system
    }

    /// The cached combination of all told constraints; the empty store's
    /// combination is the all-one constraint over the empty scope.
    pub fn combination(&self) -> &SoftConstraint {
        &self.combination
    }

    pub fn sections(&self) -> &BTreeMap<Option<AgentId>, Vec<SoftConstraint>> {
        &self.sections
    }

    /// Appends `c` to the agent's section and updates the combination.
    pub fn tell(
        &self,
        section: Option<AgentId>,
        c: &SoftConstraint,
    ) -> Result<Store, ConstraintError> {
        let combination = self.combination.combine(c)?;
        let system = combination.system().clone();
        let mut sections = self.sections.clone();
        sections.entry(section).or_default().push(c.clone());
        Ok(Store {
            system,
            sections,
            combination,
        })
    }

    /// Best level of the store: projection of the combination to the empty
    /// scope.
    pub fn blevel(&self) -> SemiringValue {
        self.combination.blevel()
    }

    /// Soft entailment: the store's best information on the scope of `c` is
    /// pointwise at most `c`. Scope variables the store does not constrain
    /// are padded with the all-one constraint before projecting.
    pub fn entails(&self, c: &SoftConstraint) -> Result<bool, ConstraintError> {
        let pad = SoftConstraint::all_one(c.system().clone(), c.scope().to_vec())?;
        let view = self.combination.combine(&pad)?.project(c.scope());
        view.leq(c)
    }

    /// Recomputes the combination from the sections; equality with the
    /// cached combination is the store's integrity invariant.
    pub fn recompute_combination(&self) -> Result<SoftConstraint, ConstraintError> {
        let mut acc = SoftConstraint::all_one(self.system.clone(), Vec::new())?;
        for cs in self.sections.values() {
            for c in cs {
                acc = acc.combine(c)?;
            }
        }
        Ok(acc)
    }
}
