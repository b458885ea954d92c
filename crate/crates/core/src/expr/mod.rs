//! Differentiable algebraic expressions over named parameters.
//!
//! Every hardware metric is an [`Expr`]. Expressions are immutable trees with
//! shared children, so cloning is cheap and values can be evaluated from many
//! threads at once. Construction goes through folding constructors
//! ([`Expr::add`], [`Expr::mul`], ...) that collapse constant subtrees and the
//! additive/multiplicative identities; nothing beyond that is simplified.
//!
//! Differentiation rules follow the usual calculus with two relaxations:
//!
//! * `ceil(f)` differentiates as `f'` (straight-through).
//! * `max(f, g)` / `min(f, g)` differentiate to the derivative of the active
//!   branch, chosen at evaluation time through a [`Expr::Select`] node. Ties
//!   go to the first operand.

mod text;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops;
use std::sync::Arc;

pub use text::ParseExprError;
pub(crate) use text::is_name;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExprError {
    #[error("unbound parameter `{0}`")]
    UnboundParameter(String),
}

/// Whether a parameter is a device-level or a design-level quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamKind {
    Tech,
    Arch,
}

/// Values a parameter may take in a concrete design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ValueDomain {
    Real,
    /// Nonnegative integers.
    Natural,
    /// Powers of two (a subset of `Natural`); rounding happens in log space.
    PowerOfTwo,
}

impl ValueDomain {
    pub fn is_discrete(self) -> bool {
        !matches!(self, ValueDomain::Real)
    }

    /// Round `v` to the nearest admissible value (discrete domains never go below 1).
    pub fn round(self, v: f64) -> f64 {
        match self {
            ValueDomain::Real => v,
            ValueDomain::Natural => v.round().max(1.0),
            ValueDomain::PowerOfTwo => v.max(1.0).log2().round().exp2(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId {
    pub name: String,
    pub kind: ParamKind,
    pub domain: ValueDomain,
}

impl ParamId {
    pub fn new(name: impl Into<String>, kind: ParamKind, domain: ValueDomain) -> Self {
        ParamId {
            name: name.into(),
            kind,
            domain,
        }
    }
}

/// Anything that can resolve a parameter name to a value.
pub trait Bindings {
    fn value(&self, name: &str) -> Option<f64>;
}

/// A (possibly partial) map from parameter name to value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment(BTreeMap<String, f64>);

impl Assignment {
    pub fn new() -> Self {
        Assignment(BTreeMap::new())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64) -> Option<f64> {
        self.0.insert(name.into(), value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Entries of `other` override entries of `self`.
    pub fn union(&self, other: &Assignment) -> Assignment {
        let mut out = self.clone();
        for (k, v) in other.iter() {
            out.insert(k, v);
        }
        out
    }
}

impl<S: Into<String>> FromIterator<(S, f64)> for Assignment {
    fn from_iter<I: IntoIterator<Item = (S, f64)>>(iter: I) -> Self {
        Assignment(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

impl Bindings for Assignment {
    fn value(&self, name: &str) -> Option<f64> {
        self.get(name)
    }
}

impl<A: Bindings, B: Bindings> Bindings for (&A, &B) {
    fn value(&self, name: &str) -> Option<f64> {
        self.1.value(name).or_else(|| self.0.value(name))
    }
}

impl<B: Bindings + ?Sized> Bindings for &B {
    fn value(&self, name: &str) -> Option<f64> {
        (**self).value(name)
    }
}

pub struct NoBindings;

impl Bindings for NoBindings {
    fn value(&self, _: &str) -> Option<f64> {
        None
    }
}

type Node = Arc<Expr>;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Param(String),
    Add(Node, Node),
    Sub(Node, Node),
    Mul(Node, Node),
    Div(Node, Node),
    Max(Node, Node),
    Min(Node, Node),
    Ceil(Node),
    Exp(Node),
    /// `if lhs >= rhs { then } else { otherwise }`; produced by differentiating `max`/`min`.
    Select {
        lhs: Node,
        rhs: Node,
        then: Node,
        otherwise: Node,
    },
}

impl Expr {
    pub fn c(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn p(name: impl Into<String>) -> Expr {
        Expr::Param(name.into())
    }

    pub fn zero() -> Expr {
        Expr::Const(0.0)
    }

    pub fn one() -> Expr {
        Expr::Const(1.0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(v) => Some(*v),
            _ => None,
        }
    }

    fn is_const(&self, v: f64) -> bool {
        matches!(self, Expr::Const(c) if *c == v)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
            _ if a.is_const(0.0) => b,
            _ if b.is_const(0.0) => a,
            _ => Expr::Add(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
            _ if b.is_const(0.0) => a,
            _ => Expr::Sub(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
            _ if a.is_const(0.0) || b.is_const(0.0) => Expr::zero(),
            _ if a.is_const(1.0) => b,
            _ if b.is_const(1.0) => a,
            _ => Expr::Mul(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) if *y != 0.0 => Expr::Const(x / y),
            _ if b.is_const(1.0) => a,
            _ if a.is_const(0.0) && !b.is_const(0.0) => Expr::zero(),
            _ => Expr::Div(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn max(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(if x >= y { *x } else { *y }),
            _ => Expr::Max(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn min(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(if x <= y { *x } else { *y }),
            _ => Expr::Min(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn ceil(a: Expr) -> Expr {
        match a {
            Expr::Const(x) => Expr::Const(x.ceil()),
            _ => Expr::Ceil(Arc::new(a)),
        }
    }

    pub fn exp(a: Expr) -> Expr {
        match a {
            Expr::Const(x) => Expr::Const(x.exp()),
            _ => Expr::Exp(Arc::new(a)),
        }
    }

    pub fn select(lhs: Expr, rhs: Expr, then: Expr, otherwise: Expr) -> Expr {
        if then == otherwise {
            return then;
        }
        match (&lhs, &rhs) {
            (Expr::Const(l), Expr::Const(r)) => {
                if l >= r {
                    then
                } else {
                    otherwise
                }
            }
            _ => Expr::Select {
                lhs: Arc::new(lhs),
                rhs: Arc::new(rhs),
                then: Arc::new(then),
                otherwise: Arc::new(otherwise),
            },
        }
    }

    /// Sum of an iterator of expressions, folded left to right.
    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
        terms.into_iter().fold(Expr::zero(), Expr::add)
    }

    pub fn eval(&self, bindings: &impl Bindings) -> Result<f64, ExprError> {
        Ok(match self {
            Expr::Const(v) => *v,
            Expr::Param(name) => bindings
                .value(name)
                .ok_or_else(|| ExprError::UnboundParameter(name.clone()))?,
            Expr::Add(a, b) => a.eval(bindings)? + b.eval(bindings)?,
            Expr::Sub(a, b) => a.eval(bindings)? - b.eval(bindings)?,
            Expr::Mul(a, b) => a.eval(bindings)? * b.eval(bindings)?,
            Expr::Div(a, b) => a.eval(bindings)? / b.eval(bindings)?,
            Expr::Max(a, b) => {
                let (x, y) = (a.eval(bindings)?, b.eval(bindings)?);
                if x >= y {
                    x
                } else {
                    y
                }
            }
            Expr::Min(a, b) => {
                let (x, y) = (a.eval(bindings)?, b.eval(bindings)?);
                if x <= y {
                    x
                } else {
                    y
                }
            }
            Expr::Ceil(a) => a.eval(bindings)?.ceil(),
            Expr::Exp(a) => a.eval(bindings)?.exp(),
            Expr::Select {
                lhs,
                rhs,
                then,
                otherwise,
            } => {
                if lhs.eval(bindings)? >= rhs.eval(bindings)? {
                    then.eval(bindings)?
                } else {
                    otherwise.eval(bindings)?
                }
            }
        })
    }

    /// Evaluate with no bindings; fails if any parameter remains.
    pub fn eval_const(&self) -> Result<f64, ExprError> {
        self.eval(&NoBindings)
    }

    fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::Param(_) => vec![],
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Max(a, b)
            | Expr::Min(a, b) => vec![a, b],
            Expr::Ceil(a) | Expr::Exp(a) => vec![a],
            Expr::Select {
                lhs,
                rhs,
                then,
                otherwise,
            } => vec![lhs, rhs, then, otherwise],
        }
    }

    pub fn contains(&self, param: &str) -> bool {
        match self {
            Expr::Param(name) => name == param,
            _ => self.children().into_iter().any(|c| c.contains(param)),
        }
    }

    pub fn params(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_params(&mut out);
        out
    }

    fn collect_params(&self, out: &mut BTreeSet<String>) {
        if let Expr::Param(name) = self {
            out.insert(name.clone());
        }
        for c in self.children() {
            c.collect_params(out);
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().into_iter().map(Expr::node_count).sum::<usize>()
    }

    pub fn has_ceil(&self) -> bool {
        matches!(self, Expr::Ceil(_)) || self.children().into_iter().any(Expr::has_ceil)
    }

    /// Rebuild the tree, replacing every parameter for which `f` returns `Some`.
    pub fn replace(&self, f: &dyn Fn(&str) -> Option<Expr>) -> Expr {
        let r = |n: &Node| n.replace(f);
        match self {
            Expr::Const(v) => Expr::Const(*v),
            Expr::Param(name) => f(name).unwrap_or_else(|| self.clone()),
            Expr::Add(a, b) => Expr::add(r(a), r(b)),
            Expr::Sub(a, b) => Expr::sub(r(a), r(b)),
            Expr::Mul(a, b) => Expr::mul(r(a), r(b)),
            Expr::Div(a, b) => Expr::div(r(a), r(b)),
            Expr::Max(a, b) => Expr::max(r(a), r(b)),
            Expr::Min(a, b) => Expr::min(r(a), r(b)),
            Expr::Ceil(a) => Expr::ceil(r(a)),
            Expr::Exp(a) => Expr::exp(r(a)),
            Expr::Select {
                lhs,
                rhs,
                then,
                otherwise,
            } => Expr::select(r(lhs), r(rhs), r(then), r(otherwise)),
        }
    }

    /// Replace bound parameters by constants; unbound parameters stay symbolic.
    pub fn substitute(&self, bindings: &impl Bindings) -> Expr {
        self.replace(&|name| bindings.value(name).map(Expr::Const))
    }

    /// Rename parameters through `f`.
    pub fn rename(&self, f: &dyn Fn(&str) -> String) -> Expr {
        self.replace(&|name| Some(Expr::Param(f(name))))
    }

    /// The same expression with every `ceil` dropped.
    pub fn relax_ceil(&self) -> Expr {
        let r = |n: &Node| n.relax_ceil();
        match self {
            Expr::Ceil(a) => r(a),
            Expr::Const(_) | Expr::Param(_) => self.clone(),
            Expr::Add(a, b) => Expr::add(r(a), r(b)),
            Expr::Sub(a, b) => Expr::sub(r(a), r(b)),
            Expr::Mul(a, b) => Expr::mul(r(a), r(b)),
            Expr::Div(a, b) => Expr::div(r(a), r(b)),
            Expr::Max(a, b) => Expr::max(r(a), r(b)),
            Expr::Min(a, b) => Expr::min(r(a), r(b)),
            Expr::Exp(a) => Expr::exp(r(a)),
            Expr::Select {
                lhs,
                rhs,
                then,
                otherwise,
            } => Expr::select(r(lhs), r(rhs), r(then), r(otherwise)),
        }
    }

    /// Symbolic partial derivative with respect to `param`.
    ///
    /// Returns `Const(0)` whenever `param` does not occur in `self`.
    pub fn diff(&self, param: &str) -> Expr {
        if !self.contains(param) {
            return Expr::zero();
        }
        let d = |n: &Node| n.diff(param);
        let own = |n: &Node| (**n).clone();
        match self {
            Expr::Const(_) => Expr::zero(),
            Expr::Param(name) => {
                if name == param {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Add(a, b) => Expr::add(d(a), d(b)),
            Expr::Sub(a, b) => Expr::sub(d(a), d(b)),
            Expr::Mul(a, b) => Expr::add(Expr::mul(d(a), own(b)), Expr::mul(own(a), d(b))),
            Expr::Div(a, b) => {
                let num = Expr::sub(Expr::mul(d(a), own(b)), Expr::mul(own(a), d(b)));
                Expr::div(num, Expr::mul(own(b), own(b)))
            }
            Expr::Max(a, b) => Expr::select(own(a), own(b), d(a), d(b)),
            Expr::Min(a, b) => Expr::select(own(b), own(a), d(a), d(b)),
            Expr::Ceil(a) => d(a),
            Expr::Exp(a) => Expr::mul(self.clone(), d(a)),
            Expr::Select {
                lhs,
                rhs,
                then,
                otherwise,
            } => Expr::select(own(lhs), own(rhs), d(then), d(otherwise)),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        text::write_expr(self, f)
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Self {
        Expr::Const(v)
    }
}

impl From<&str> for Expr {
    fn from(name: &str) -> Self {
        Expr::p(name)
    }
}

macro_rules! bin_op {
    ($tr:ident, $method:ident, $ctor:ident) => {
        impl ops::$tr<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::$ctor(self, rhs)
            }
        }
        impl ops::$tr<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                Expr::$ctor(self, Expr::Const(rhs))
            }
        }
        impl ops::$tr<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::$ctor(Expr::Const(self), rhs)
            }
        }
    };
}

bin_op!(Add, add, add);
bin_op!(Sub, sub, sub);
bin_op!(Mul, mul, mul);
bin_op!(Div, div, div);

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn a(pairs: &[(&str, f64)]) -> Assignment {
        pairs.iter().map(|(k, v)| (*k, *v)).collect()
    }

    #[test]
    fn eval_examples() {
        let e = 2.0 * Expr::p("wireCap") + Expr::p("node");
        assert_eq!(e.eval(&a(&[("wireCap", 3.0), ("node", 1.0)])).unwrap(), 7.0);
        assert_eq!(Expr::c(5.0).eval(&Assignment::new()).unwrap(), 5.0);
        let m = Expr::max(Expr::p("t1"), Expr::p("t2"));
        assert_eq!(m.eval(&a(&[("t1", 100.0), ("t2", 10.0)])).unwrap(), 100.0);
    }

    #[test]
    fn eval_reports_unbound_parameter() {
        let e = Expr::p("x") + Expr::p("y");
        assert_eq!(
            e.eval(&a(&[("x", 1.0)])),
            Err(ExprError::UnboundParameter("y".into()))
        );
    }

    #[test]
    fn diff_examples() {
        let e = Expr::p("readEnergy") * Expr::p("r");
        let d = e.diff("readEnergy");
        for r in [0.0, 1.5, -7.0, 1e6] {
            assert_eq!(d.eval(&a(&[("readEnergy", 3.0), ("r", r)])).unwrap(), r);
        }
        assert_eq!(Expr::c(5.0).diff("wireCap"), Expr::zero());
    }

    #[test]
    fn max_min_ties_go_to_first_operand() {
        let e = Expr::max(2.0 * Expr::p("x"), Expr::p("x") + 1.0);
        let d = e.diff("x");
        // at x = 1 both branches equal 2
        assert_eq!(d.eval(&a(&[("x", 1.0)])).unwrap(), 2.0);
        assert_eq!(d.eval(&a(&[("x", 0.0)])).unwrap(), 1.0);
        let e = Expr::min(2.0 * Expr::p("x"), Expr::p("x") + 1.0);
        let d = e.diff("x");
        assert_eq!(d.eval(&a(&[("x", 1.0)])).unwrap(), 2.0);
        assert_eq!(d.eval(&a(&[("x", 3.0)])).unwrap(), 1.0);
    }

    #[test]
    fn ceil_is_straight_through() {
        let e = Expr::ceil(Expr::c(1024.0) / Expr::p("b"));
        let d = e.diff("b");
        let v = d.eval(&a(&[("b", 64.0)])).unwrap();
        assert_eq!(v, -1024.0 / (64.0 * 64.0));
    }

    #[test]
    fn substitute_examples() {
        let e = Expr::p("x") + Expr::p("y");
        assert_eq!(e.substitute(&a(&[("x", 2.0)])), Expr::c(2.0) + Expr::p("y"));
        assert_eq!(e.substitute(&Assignment::new()), e);
        let e = Expr::p("x") * Expr::p("y");
        let s = e.substitute(&a(&[("x", 3.0), ("y", 4.0)]));
        assert_eq!(s.eval(&Assignment::new()).unwrap(), 12.0);
    }

    #[test]
    fn folding_keeps_constants_symbol_free() {
        assert_eq!(Expr::c(0.0) * Expr::p("x"), Expr::zero());
        assert_eq!(Expr::c(1.0) * Expr::p("x"), Expr::p("x"));
        assert_eq!(Expr::p("x") + 0.0, Expr::p("x"));
        assert_eq!(Expr::p("x") / 1.0, Expr::p("x"));
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-4.0f64..4.0).prop_map(Expr::c),
            prop_oneof![Just("x"), Just("y"), Just("z")].prop_map(Expr::p),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a * b),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::max(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::min(a, b)),
                inner.clone().prop_map(Expr::ceil),
            ]
        })
    }

    proptest! {
        #[test]
        fn substitute_round_trip(e in arb_expr(), x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0) {
            let full = a(&[("x", x), ("y", y), ("z", z)]);
            let direct = e.eval(&full).unwrap();
            let folded = e.substitute(&full).eval(&Assignment::new()).unwrap();
            prop_assert_eq!(direct, folded);
            let partial = a(&[("x", x)]);
            let rest = a(&[("y", y), ("z", z)]);
            prop_assert_eq!(e.substitute(&partial).eval(&rest).unwrap(), direct);
        }

        #[test]
        fn diff_of_absent_param_is_structural_zero(e in arb_expr()) {
            prop_assert_eq!(e.diff("w"), Expr::zero());
        }

        #[test]
        fn text_round_trip(e in arb_expr()) {
            let s = e.to_string();
            let back: Expr = s.parse().unwrap();
            prop_assert_eq!(back, e);
        }
    }
}
