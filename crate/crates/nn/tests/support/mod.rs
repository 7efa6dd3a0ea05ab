pub mod layer_checks;
