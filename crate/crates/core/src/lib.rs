pub mod auction;
pub mod baselines;
pub mod checkpoint;
pub mod datagen;
pub mod edgenet;
pub mod evalkit;
pub mod numgrad;
pub mod regret;
pub mod trainer;
