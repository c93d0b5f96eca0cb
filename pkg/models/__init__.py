import importlib
import logging

from models.base_model import BaseModel
from utils.errors import ConfigError

log = logging.getLogger(__name__)


def find_model_using_name(model_name):
    # Given the option model.name = [modelname], the file
    # "models/modelname_model.py" will be imported and the class called
    # ModelNameModel() (case-insensitive, underscores dropped) returned.
    model_filename = "models." + model_name + "_model"
    try:
        modellib = importlib.import_module(model_filename)
    except ModuleNotFoundError:
        raise ConfigError("no model module %s.py for model [%s]" % (model_filename, model_name))

    model = None
    target_model_name = model_name.replace('_', '') + 'model'
    for name, cls in modellib.__dict__.items():
        if name.lower() == target_model_name.lower() \
           and isinstance(cls, type) and issubclass(cls, BaseModel):
            model = cls

    if model is None:
        raise ConfigError("In %s.py, there should be a subclass of BaseModel with class name that matches %s in lowercase."
                          % (model_filename, target_model_name))

    return model


def create_model(opt, seed=0, generator=None):
    """Build the model named by `opt.name` from a model ConfigDict."""
    model = find_model_using_name(opt.name)
    instance = model()
    instance.initialize(opt, seed=seed, generator=generator)
    log.info("model [%s] was created", instance.name())
    return instance
