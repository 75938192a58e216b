//! Binary recursive partitions of the design: trees, cells, k-d trees and
//! partition counting.
//!
//! Everything here is data-relative. A cell is identified by the split path
//! to its leaf and its content is the set of design points reaching it, so no
//! geometric boxes are stored.

mod cells;
mod count;
mod kd;
mod tree;

pub use cells::{
    canonical_cells, cell_diameter, cell_measures, diameter, diameters_of, holder_projection_bound, is_valid,
    min_leaf_size, project_cell_means, CellStats, Diameters, StepFunction,
};
pub use count::{
    enumerate_valid_trees, log_partitioning_number, partitioning_number, EnumeratedPartition, Enumeration,
    DEFAULT_ENUMERATION_CAP,
};
pub use kd::{build_kd_tree, regularity_check, regularity_levels, RegularityLevel};
pub use tree::{NestedTree, Node, SplitRule, TreePartition};
