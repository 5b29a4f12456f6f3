use rand::Rng as _;

use crate::numerics::Matrix;
use crate::rng::Rng;

/// Declares a group of named matrices together with its graph binding.
///
/// For `param_group!(Foo, FooVars { a, b })` this generates `Foo` holding
/// one `Matrix` per field, `FooVars` holding one `Var` per field, and the
/// plumbing to bind, read back gradients and enumerate by name.
macro_rules! param_group {
    ($(#[$meta:meta])* $name:ident, $vars:ident { $($(#[$fmeta:meta])* $field:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            $($(#[$fmeta])* pub $field: $crate::numerics::Matrix,)+
        }

        /// Graph handles for the matching parameter group.
        #[derive(Debug, Clone, Copy)]
        pub struct $vars {
            $(pub $field: $crate::numerics::Var,)+
        }

        impl $name {
            pub const FIELD_NAMES: &'static [&'static str] = &[$(stringify!($field)),+];

            /// Adds every matrix to `graph` as a trainable leaf.
            pub fn bind(&self, graph: &mut $crate::numerics::Graph) -> $vars {
                $vars { $($field: graph.param(self.$field.clone()),)+ }
            }

            /// Collects the gradients of a bound group.
            pub fn from_grads(vars: &$vars, grads: &$crate::numerics::Gradients) -> Self {
                Self { $($field: grads.grad(vars.$field),)+ }
            }

            pub fn named(&self, prefix: &str) -> Vec<(String, &$crate::numerics::Matrix)> {
                vec![$((format!("{prefix}{}", stringify!($field)), &self.$field),)+]
            }

            pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut $crate::numerics::Matrix)> {
                vec![$((format!("{prefix}{}", stringify!($field)), &mut self.$field),)+]
            }
        }

        impl $crate::numerics::Parameters for $name {
            fn tensors(&self) -> Vec<(String, &$crate::numerics::Matrix)> {
                self.named("")
            }

            fn tensors_mut(&mut self) -> Vec<(String, &mut $crate::numerics::Matrix)> {
                self.named_mut("")
            }
        }
    };
}

pub(crate) use param_group;

/// Weight matrix drawn from `uniform(-1/sqrt(rows), 1/sqrt(rows))`.
pub(crate) fn uniform_weight(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Matrix::new(rows, cols, data).expect("finite init")
}
