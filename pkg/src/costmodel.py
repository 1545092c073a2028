"""
Modelo de coste de la atención en una inferencia del DiT (un solo paso de tiempo):
historia completa en una única ventana ("vanilla") frente a contexto comprimido
inyectado como claves/valores.

Sólo se cuentan las rutas de atención (el MLP es idéntico en ambos lados) y, en
memoria, los tensores de claves y valores en float64.

Funciones principales:
- attention_cost: FLOPs y bytes de una pila de B bloques para L tokens de ancho d.
- reference_attention_flops: recuento independiente producto a producto.
- scaling_table: puntos de coste para n = 1..M segmentos.
- microbench: mediana del tiempo de una llamada a predict_velocity por configuración.
"""
import os
import time
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from threadpoolctl import threadpool_limits
from tqdm import tqdm

from checkpoint_utils import save_csv
from compression import PASADO, parse_strategy, plan_queries
from dit import DiTParams, TaskLayout, predict_velocity
from errores import ErrorConfiguracion
from flexformer import ContextBundle, ContextChunk
from numerics import Tensor, no_grad

BYTES_FLOAT = 8
COLUMNAS_COSTE = ["n_frames", "seq_vanilla", "seq_compressed", "flops_vanilla",
                  "flops_compressed", "mem_vanilla", "mem_compressed", "time_vanilla_ms",
                  "time_compressed_ms"]


@dataclass(frozen=True)
class CostPoint:
    n_frames: int
    seq_len_vanilla: int
    seq_len_compressed: int
    flops_vanilla: int
    flops_compressed: int
    mem_vanilla: int
    mem_compressed: int


def attention_cost(L, d, blocks):
    """
    :return: (flops, bytes) con flops = B·(4·L·d² + 2·L²·d) y bytes = B·2·L·d·8.
    """
    flops = blocks * (4 * L * d * d + 2 * L * L * d)
    memoria = blocks * 2 * L * d * BYTES_FLOAT
    return int(flops), int(memoria)


def _productos(m, n, p):
    return m * n * p


def reference_attention_flops(L, d, blocks):
    """Suma de multiplicaciones-acumulaciones de cada producto matricial de la atención."""
    por_bloque = 0
    for _ in ("q", "k", "v", "o"):
        por_bloque += _productos(L, d, d)
    por_bloque += _productos(L, d, L)  # Q·Kᵀ
    por_bloque += _productos(L, L, d)  # A·V
    return blocks * por_bloque


def _geometria(segment_tokens, frame_hw):
    H, W = frame_hw
    if segment_tokens % (H * W):
        raise ErrorConfiguracion(
            f"{segment_tokens} tokens por segmento no son un número entero de fotogramas {H}x{W}")
    return segment_tokens // (H * W), H, W


def scaling_table(segment_tokens, strategy, max_segments, d, blocks, frame_hw=(4, 4)):
    """
    Puntos de coste para n = 1..M segmentos.

    vanilla: L = n·S. Comprimido: L = S + Σ_{i<n} N_i, con N_i del plan de cada
    segmento de la historia.
    """
    T_seg, H, W = _geometria(segment_tokens, frame_hw)
    n_historia = plan_queries((T_seg, H, W), strategy, PASADO).n_queries
    puntos = []
    for n in range(1, max_segments + 1):
        l_vanilla = n * segment_tokens
        l_comprimido = segment_tokens + (n - 1) * n_historia
        flops_v, mem_v = attention_cost(l_vanilla, d, blocks)
        flops_c, mem_c = attention_cost(l_comprimido, d, blocks)
        puntos.append(CostPoint(n * T_seg, l_vanilla, l_comprimido, flops_v, flops_c,
                                mem_v, mem_c))
    return puntos


def _bundle_aleatorio(n_chunks, grid, strategy, d, rng):
    plan = plan_queries(grid, strategy, PASADO)
    chunks = [ContextChunk(Tensor(rng.standard_normal((plan.n_queries, d))), plan,
                           tuple(grid) + (0,), plan.positions) for _ in range(n_chunks)]
    return ContextBundle(chunks, [i * grid[0] for i in range(n_chunks)])


def _mediana_ms(funcion, repeticiones):
    tiempos = []
    for _ in range(repeticiones):
        inicio = time.perf_counter()
        funcion()
        tiempos.append((time.perf_counter() - inicio) * 1000.0)
    return float(np.median(tiempos))


def microbench(config, n_list, repetitions=3):
    """
    Mide una llamada a predict_velocity con pesos aleatorios por cada n.

    :param config: BenchConfig (d_model, heads, blocks, seg_tokens, frame_hw, seed).
    :return: Lista de (time_vanilla_ms, time_compressed_ms), una por n.
    """
    strategy = parse_strategy(config.estrategia_efectiva())
    T_seg, H, W = _geometria(config.seg_tokens, config.frame_hw)
    d = config.d_model
    dit = DiTParams(d, config.heads, config.blocks, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    texto = np.zeros((0, d))
    resultados = []
    with threadpool_limits(limits=1), no_grad():
        for n in tqdm(n_list, desc="Microbenchmark", unit="config"):
            z_vanilla = Tensor(rng.standard_normal((n * T_seg, H, W, d)))
            layout_vanilla = TaskLayout.build("prediction", [], n * T_seg)
            z_comprimido = Tensor(rng.standard_normal((T_seg, H, W, d)))
            bundle = _bundle_aleatorio(n - 1, (T_seg, H, W), strategy, d, rng)
            layout_comprimido = TaskLayout.build("prediction", [T_seg] * (n - 1), T_seg)

            t_vanilla = _mediana_ms(lambda: predict_velocity(
                z_vanilla, 0.5, texto, ContextBundle(), layout_vanilla, dit), repetitions)
            t_comprimido = _mediana_ms(lambda: predict_velocity(
                z_comprimido, 0.5, texto, bundle, layout_comprimido, dit), repetitions)
            resultados.append((t_vanilla, t_comprimido))
    return resultados


def write_cost_csv(points, times, ruta):
    """
    CSV con las columnas de COLUMNAS_COSTE; `times` puede ser None (tiempos vacíos).

    :return: Ruta escrita.
    """
    filas = []
    for i, punto in enumerate(points):
        valores = asdict(punto)
        t_v, t_c = times[i] if times is not None else (None, None)
        filas.append({
            "n_frames": valores["n_frames"],
            "seq_vanilla": valores["seq_len_vanilla"],
            "seq_compressed": valores["seq_len_compressed"],
            "flops_vanilla": valores["flops_vanilla"],
            "flops_compressed": valores["flops_compressed"],
            "mem_vanilla": valores["mem_vanilla"],
            "mem_compressed": valores["mem_compressed"],
            "time_vanilla_ms": t_v,
            "time_compressed_ms": t_c,
        })
    os.makedirs(os.path.dirname(os.path.abspath(ruta)), exist_ok=True)
    return save_csv(pd.DataFrame(filas, columns=COLUMNAS_COSTE), ruta)
