//! Dataset-membership classification: a from-scratch random forest and the
//! repeated stratified evaluation harness around it.

mod forest;
mod harness;
mod tree;

pub use forest::{predict, train_forest, Forest, ForestConfig, Prediction};
pub use harness::{
    default_feature_sets, name_that_dataset, ConfusionMatrix, CurvePoint, FeatureSet, FeatureSetResult,
    HarnessConfig, LearningCurve,
};
pub use tree::{gini, split_gini, train_tree, DecisionTree, MaxFeatures, Node, TreeConfig};
