//! Published parameter counts for the three reference configurations.

use cnf_core::FabricDims;

pub struct Reference {
    pub name: &'static str,
    pub resolution: usize,
    pub classes: usize,
    pub baseline: usize,
    /// Reported counts at sparsity 0.05, 0.03 and 0.01.
    pub pruned: [usize; 3],
}

pub const SPARSITIES: [f64; 3] = [0.05, 0.03, 0.01];

pub const REFERENCES: [Reference; 3] = [
    Reference {
        name: "cifar10",
        resolution: 32,
        classes: 10,
        baseline: 4_523_402,
        pruned: [228_611, 138_194, 47_778],
    },
    Reference {
        name: "cifar100",
        resolution: 32,
        classes: 100,
        baseline: 4_529_252,
        pruned: [234_461, 144_044, 53_628],
    },
    Reference {
        name: "pascalvoc",
        resolution: 64,
        classes: 20,
        baseline: 5_376_340,
        pruned: [271_876, 164_413, 56_951],
    },
];

impl Reference {
    pub fn dims(&self) -> FabricDims {
        FabricDims::for_resolution(8, 64, self.resolution, self.classes).unwrap()
    }
}
