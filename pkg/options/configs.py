import ml_collections
from ml_collections.config_dict import placeholder


def get_gen_config():
    """Returns the synthetic biased dataset configuration."""
    config = ml_collections.ConfigDict()
    config.seed = 0
    config.n = 4000
    config.grid = 8
    config.bias = 0.8           # P(a = y)
    config.noise = 0.1
    config.signal = 0.3
    config.train_fraction = 0.8
    config.export_csv = True
    return config


def get_model_config(input_dim=64):
    """Returns the two-head classifier configuration (d -> 64 -> 32 -> heads)."""
    config = ml_collections.ConfigDict()
    config.name = 'two_head'
    config.input_dim = input_dim
    config.hidden = (64, 32)
    config.n_target = 2
    config.n_protected = 2
    config.init_type = 'uniform'
    return config


def _optimizer_fields(config):
    config.lr = 1e-3
    config.beta1 = 0.9
    config.beta2 = 0.999
    config.adam_eps = 1e-8
    config.clip = 1.0
    return config


def get_train_config():
    """Returns the base-training configuration."""
    config = ml_collections.ConfigDict()
    config.seed = 0
    config.epochs = 50
    config.batch_size = 128
    config.protected_weight = 1.0  # CE(φ, a) weight in the joint pass, 0 trains θ on the target only
    return _optimizer_fields(config)


def get_attack_config():
    config = ml_collections.ConfigDict()
    config.method = 'fgsm'
    config.eps = 0.01
    config.pgd_steps = 10
    config.pgd_step_size = placeholder(float)   # None means eps / 4
    return config


def get_curriculum_config():
    config = ml_collections.ConfigDict()
    config.seed = 0
    config.eps = (0.0, 0.001, 0.01)
    config.order = 'ascending'
    config.attack = get_attack_config()
    return config


def get_finetune_config():
    """Returns the curriculum fine-tuning configuration."""
    config = ml_collections.ConfigDict()
    config.seed = 0
    config.alpha = 0.5
    config.epochs = 10
    config.batch_size = 128
    config.micro_batch_size = placeholder(int)  # None means batch_size
    config.dump_curriculum = False   # write the first minibatch to <out>/debug/
    _optimizer_fields(config)
    config.curriculum = get_curriculum_config()
    return config


def get_analysis_config():
    config = ml_collections.ConfigDict()
    config.eps_grid = (0.0, 0.001, 0.01, 0.05, 0.1)
    config.num_samples = 8
    config.ig_steps = 50
    config.attack = get_attack_config()
    return config


def get_experiment_config():
    """Returns the full pipeline configuration, locked against new keys."""
    config = ml_collections.ConfigDict()
    config.seed = 0
    config.out = 'results'
    config.threads = 1
    config.data = get_gen_config()
    config.model = get_model_config()
    config.train = get_train_config()
    config.finetune = get_finetune_config()
    config.analysis = get_analysis_config()
    config.lock()
    return config
