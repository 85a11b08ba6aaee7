"""Float to integer model conversion."""
import logging

from intrnn.runtime.config import ConvertConfig
from intrnn.runtime.model import INPUT_STAGE, IntegerModel
from intrnn.runtime.stages import StageTable

logger = logging.getLogger(__name__)

__all__ = ["ConvertConfig", "convert"]


def convert(float_model, stages, config=None):
    """Quantizes a float model against calibrated stage QuantParams.

    Weights become 8-bit grids, biases 32-bit integers, nonlinearities PWL
    tables with ``config.pieces`` pieces; each layer's input grid is its
    producer's output grid.

    Args:
        float_model (FloatModel): the calibrated reference.
        stages (StageTable or dict): QuantParams by stage name, as returned
            by calibrate.
        config (Optional[ConvertConfig]): conversion settings.

    Returns:
        IntegerModel: the converted model.

    Raises:
        ConversionError: on missing stages or bit-width ledger violations.
        PwlError: if a piece count does not fit a table's input grid.
    """
    config = config or ConvertConfig()
    if not isinstance(stages, StageTable):
        table = StageTable()
        for key, qp in stages.items():
            table[key] = qp
        stages = table
    in_qp = stages[INPUT_STAGE] if float_model.input_kind == "features" else None
    input_qparams = in_qp
    producers = {}
    layers = []
    for layer in float_model.layers:
        converted = layer.convert(stages, config, in_qp, producers)
        logger.debug("converted %r", converted)
        producers[layer.name] = in_qp = converted.out_qparams
        layers.append(converted)
    model = IntegerModel(layers, float_model.input_kind, float_model.input_dim, input_qparams,
                         config)
    report = model.size_report()
    logger.info("converted %d layers with %d pieces: %d float bytes -> %d integer bytes",
                len(layers), config.pieces, report["float_bytes"], report["integer_bytes"])
    return model
