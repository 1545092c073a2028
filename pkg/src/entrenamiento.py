"""
Este módulo implementa el entrenamiento en tres etapas.

- Etapa 1: el FlexFormer aprende a reconstruir segmentos (pérdida MSE).
- Etapa 2: FlexFormer congelado; el DiT se entrena con flow matching y una
  tarea por lote elegida entre predicción, interpolación y retrodicción.
- Etapa 3: continúa la etapa 2 mezclando disposiciones multiplano con el gap
  configurado.

Cada etapa escribe un checkpoint `LVCK` y un registro CSV `step,stage,task,loss`
en el directorio de salida. Con las mismas semillas el resultado es idéntico
bit a bit.
"""
import math
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
from tqdm import tqdm

import consola
from checkpoint_utils import save_csv
from compression import FUTURO, PASADO, parse_strategy
from datos_sinteticos import make_clip, make_multishot, sample_clip_spec, split_clip
from dit import DiTParams, TaskLayout, flow_loss, flow_pair, predict_velocity
from errores import ErrorArranque, ErrorDivergencia
from flexformer import FlexFormerParams, decode_segment, encode_history, encode_segment, \
    reconstruction_loss
from modelo import LoViCModel, cargar_modelo, dividir_tarea, guardar_modelo
from numerics import AdamOptimizer, Tensor, add, mul, no_grad

UMBRAL_DIVERGENCIA = 1e6
VENTANA_SUAVIZADO = 50
COLUMNAS_LOG = ["step", "stage", "task", "loss"]
NOMBRES_CHECKPOINT = {1: "flexformer_stage1.lvck", 2: "lovic_stage2.lvck",
                      3: "lovic_stage3.lvck"}


@dataclass
class ResultadoEntrenamiento:
    model: LoViCModel
    log: pd.DataFrame
    checkpoint: str = None
    log_path: str = None


def ruta_checkpoint(output_dir, stage):
    return os.path.join(str(output_dir), NOMBRES_CHECKPOINT[stage])


def _semilla(rng):
    return int(rng.integers(2 ** 31))


def _media(perdidas):
    total = perdidas[0]
    for perdida in perdidas[1:]:
        total = add(total, perdida)
    return mul(total, 1.0 / len(perdidas))


def _comprobar_divergencia(valor, paso):
    if not math.isfinite(valor) or valor > UMBRAL_DIVERGENCIA:
        raise ErrorDivergencia(f"Pérdida {valor} en el paso {paso}: entrenamiento divergente")


def _ejemplo_reconstruccion(rng, config, model):
    spec = sample_clip_spec(_semilla(rng), grid=config.grid, d=config.d_model,
                            n_text=config.n_text, noise=config.noise)
    segmento = split_clip(make_clip(spec), 3)[int(rng.integers(3))]
    orientacion = PASADO if rng.random() < 0.5 else FUTURO
    chunk = encode_segment(segmento, model.strategy, orientacion, model.flex)
    return reconstruction_loss(decode_segment(chunk, model.flex), segmento)


def _ejemplo_flujo(rng, config, model, tarea):
    d = model.flex.d_model
    if tarea == "multishot":
        tomas = make_multishot(_semilla(rng), config.shots, config.grid[0] // 3,
                               config.grid[1:], d, config.n_text, config.noise)
        contexto, objetivo = tomas[:-1], tomas[-1]
        layout = TaskLayout.build("multishot", [s.frames for s in contexto], objetivo.frames,
                                  model.gap)
    else:
        spec = sample_clip_spec(_semilla(rng), grid=config.grid, d=d, n_text=config.n_text,
                                noise=config.noise)
        contexto, objetivo = dividir_tarea(split_clip(make_clip(spec), 3), tarea)
        layout = TaskLayout.build(tarea, [s.frames for s in contexto], objetivo.frames)
    with no_grad():
        bundle = encode_history(contexto, model.strategy, model.flex, layout)
    t = float(rng.uniform())
    estado = flow_pair(objetivo.video.data, rng.standard_normal(objetivo.video.shape), t)
    prediccion = predict_velocity(Tensor(estado.z_t), t, objetivo.text.detach(), bundle, layout,
                                  model.dit)
    return flow_loss(prediccion, estado)


def entrenar(config, model):
    """
    Bucle de optimización en memoria de una etapa.

    :param config: TrainConfig.
    :param model: LoViCModel de partida (en la etapa 1 sólo se usa el FlexFormer).
    :return: DataFrame con el registro de pérdidas.
    """
    etapa = config.stage
    if etapa == 1:
        parametros = model.flex.parameters()
        tareas, pesos = ["reconstruction"], np.ones(1)
    else:
        parametros = model.dit.parameters()
        mezcla = config.mezcla_tareas()
        tareas = list(mezcla)
        pesos = np.array([mezcla[t] for t in tareas])
        pesos = pesos / pesos.sum()
    optimizador = AdamOptimizer(parametros, lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)

    registros = []
    for paso in tqdm(range(config.steps), desc=f"Entrenando etapa {etapa}", unit="paso"):
        optimizador.zero_grad()
        tarea = tareas[int(rng.choice(len(tareas), p=pesos))] if etapa > 1 else tareas[0]
        if etapa == 1:
            perdidas = [_ejemplo_reconstruccion(rng, config, model)
                        for _ in range(config.batch_size)]
        else:
            perdidas = [_ejemplo_flujo(rng, config, model, tarea)
                        for _ in range(config.batch_size)]
        perdida = _media(perdidas)
        valor = perdida.item()
        _comprobar_divergencia(valor, paso)
        perdida.backward()
        optimizador.step()
        registros.append({"step": paso, "stage": etapa, "task": tarea, "loss": valor})
    return pd.DataFrame(registros, columns=COLUMNAS_LOG)


def modelo_inicial(config):
    """FlexFormer recién inicializado para la etapa 1."""
    flex = FlexFormerParams(config.d_model, config.heads, config.enc_blocks, config.dec_blocks,
                            seed=config.seed, variant=config.variant,
                            n_fixed_queries=config.n_fixed_queries)
    return LoViCModel(flex, None, parse_strategy(config.strategy), config.gap)


def _modelo_previo(config, output_dir):
    etapa = config.stage
    previa = config.checkpoint_in or ruta_checkpoint(output_dir, etapa - 1)
    if not os.path.exists(previa):
        raise ErrorArranque(
            f"La etapa {etapa} necesita el checkpoint de la etapa {etapa - 1}: no existe {previa}")
    consola.info(f"Cargando checkpoint de la etapa {etapa - 1}: {previa}")
    model = cargar_modelo(previa)
    if "gap" in config.model_fields_set:
        model.gap = config.gap
    if "strategy" in config.model_fields_set:
        pedida = parse_strategy(config.strategy)
        if pedida != model.strategy:
            consola.aviso(f"Estrategia {pedida} en lugar de la del checkpoint ({model.strategy})")
        model.strategy = pedida
    if etapa == 2:
        model.dit = DiTParams(model.flex.d_model, config.heads, config.dit_blocks,
                              seed=config.seed + 1)
    elif model.dit is None:
        raise ErrorArranque(f"El checkpoint {previa} no contiene el DiT de la etapa 2")
    return model


def train_stage(config, output_dir):
    """
    Ejecuta una etapa completa y guarda sus artefactos.

    :param config: TrainConfig.
    :param output_dir: Directorio de salida.
    :return: ResultadoEntrenamiento con el modelo, el registro y las rutas escritas.
    :raises ErrorArranque: Si falta el checkpoint de la etapa anterior.
    """
    os.makedirs(output_dir, exist_ok=True)
    model = modelo_inicial(config) if config.stage == 1 else _modelo_previo(config, output_dir)
    consola.inicio(f"Etapa {config.stage}: {config.steps} pasos, lote {config.batch_size}, "
                   f"estrategia {model.strategy}")

    log = entrenar(config, model)
    checkpoint = guardar_modelo(ruta_checkpoint(output_dir, config.stage), model)
    consola.guardado(checkpoint)
    log_path = save_csv(log, os.path.join(str(output_dir), f"loss_stage{config.stage}.csv"))
    consola.guardado(log_path)
    if len(log):
        inicial, final = suavizar(log["loss"].to_numpy())
        consola.dato(f"Pérdida suavizada: inicial {inicial:.6f}, final {final:.6f}")
    return ResultadoEntrenamiento(model, log, checkpoint, log_path)


def suavizar(perdidas, ventana=VENTANA_SUAVIZADO):
    """Medias de las primeras y de las últimas `ventana` pérdidas."""
    perdidas = np.asarray(perdidas, dtype=np.float64)
    n = min(ventana, len(perdidas))
    return float(np.mean(perdidas[:n])), float(np.mean(perdidas[-n:]))
