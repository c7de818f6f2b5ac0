from typing import Dict, Any

# Named run presets. A config file picks one with "preset" and overrides keys on top.
PRESETS: Dict[str, Dict[str, Any]] = {
    "desk": {
        "training": {
            "ensemble_size": 2,
            "repetitions": 1,
            "folds": 10,
        },
    },
    "full": {
        "training": {
            "ensemble_size": 10,
            "repetitions": 3,
            "folds": 10,
            "max_epochs": 200,
        },
    },
    "reduced": {
        "training": {
            "ensemble_size": 1,
            "repetitions": 1,
            "folds": 5,
            "max_epochs": 60,
        },
    },
    "smoke": {
        "training": {
            "ensemble_size": 1,
            "repetitions": 1,
            "folds": 3,
            "max_epochs": 5,
            "early_stop_patience": 5,
            "plateau_patience": 2,
        },
        "model": {
            "conv_channels": [8, 16, 32, 32],
            "embedding_dim": 32,
            "feedforward_dim": 64,
            "classifier_hidden_dim": 32,
        },
        "pipeline": {
            "augmentation": {"target_multiplier": 1.0},
        },
        "campaign": {
            "m_list": [28],
        },
    },
    "planted": {
        "generator": {
            "planted_sensors": [5, 16, 23],
        },
        "training": {
            "ensemble_size": 1,
            "repetitions": 1,
            "folds": 5,
            "max_epochs": 60,
            "lambda_l1": 1e-4,
        },
        "campaign": {
            "planted_seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9],
        },
    },
}

DEFAULT_PRESET = "desk"
