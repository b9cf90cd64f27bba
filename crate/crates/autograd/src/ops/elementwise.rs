use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Op;
use crate::Var;

fn check_same(op: &str, a: &Var<'_>, b: &Var<'_>) {
    let (sa, sb) = (a.shape(), b.shape());
    assert_eq!(sa, sb, "{op}: shape mismatch {sa:?} vs {sb:?}");
}

impl<'t> Var<'t> {
    /// `scale * self + shift`
    pub fn affine(&self, scale: f64, shift: f64) -> Var<'t> {
        let v = self.value().map(|x| scale * x + shift);
        self.unary(v, Op::Affine { x: self.id(), scale })
    }

    /// `numerator / self`
    pub fn recip(&self, numerator: f64) -> Var<'t> {
        let v = self.value().map(|x| numerator / x);
        self.unary(
            v,
            Op::Recip {
                x: self.id(),
                numerator,
            },
        )
    }

    pub fn abs(&self) -> Var<'t> {
        let v = self.value().map(f64::abs);
        self.unary(v, Op::Abs(self.id()))
    }

    pub fn square(&self) -> Var<'t> {
        let v = self.value().map(|x| x * x);
        self.unary(v, Op::Square(self.id()))
    }

    pub fn sqrt(&self) -> Var<'t> {
        let v = self.value().map(f64::sqrt);
        self.unary(v, Op::Sqrt(self.id()))
    }

    /// `ln(1 + self)`
    pub fn log1p(&self) -> Var<'t> {
        let v = self.value().map(f64::ln_1p);
        self.unary(v, Op::Log1p(self.id()))
    }

    pub fn exp(&self) -> Var<'t> {
        let v = self.value().map(f64::exp);
        self.unary(v, Op::Exp(self.id()))
    }

    pub fn relu(&self) -> Var<'t> {
        let v = self.value().map(|x| x.max(0.0));
        self.unary(v, Op::Relu(self.id()))
    }

    pub fn elu(&self) -> Var<'t> {
        let v = self.value().map(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.unary(v, Op::Elu(self.id()))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let v = self.value().map(|x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        self.unary(v, Op::Sigmoid(self.id()))
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        check_same("add", &self, &rhs);
        let v = self.value().zip_map(&rhs.value(), |a, b| a + b);
        self.binary(&rhs, v, Op::Add(self.id(), rhs.id()))
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        check_same("sub", &self, &rhs);
        let v = self.value().zip_map(&rhs.value(), |a, b| a - b);
        self.binary(&rhs, v, Op::Sub(self.id(), rhs.id()))
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        check_same("mul", &self, &rhs);
        let v = self.value().zip_map(&rhs.value(), |a, b| a * b);
        self.binary(&rhs, v, Op::Mul(self.id(), rhs.id()))
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        check_same("div", &self, &rhs);
        let v = self.value().zip_map(&rhs.value(), |a, b| a / b);
        self.binary(&rhs, v, Op::Div(self.id(), rhs.id()))
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.affine(1.0, rhs)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.affine(1.0, -rhs)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.affine(rhs, 0.0)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.affine(-1.0, 0.0)
    }
}
