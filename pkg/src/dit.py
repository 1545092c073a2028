"""
Este módulo implementa el transformer de difusión condicionado por contexto.

Funciones principales:
- flow_pair: par de entrenamiento de flow matching z_t = t·z_0 + (1-t)·ε, objetivo ε - z_0.
- TaskLayout / assign_positions: intervalos temporales de cada tarea (predicción,
  interpolación, retrodicción, multiplano) y posiciones RoPE de cada token.
- predict_velocity: predicción de la velocidad; en cada bloque los tokens de
  contexto se añaden a claves y valores (las consultas son sólo los tokens actuales).
- flow_loss: MSE entre la velocidad predicha y ε - z_0.
- sample_segment: integrador de Euler de t = 0 (ruido) a t = 1 (datos).
"""
import math
from dataclasses import dataclass

import numpy as np

from errores import ErrorConfiguracion, ErrorContrato, ErrorDominio, ErrorLayout
from numerics import (BlockParams, ParameterSet, Tensor, add, concat, gelu, init_normal,
                      init_zeros, linear, mse, no_grad, reshape, transformer_block)
from positional import grid_positions, text_layout

TAREAS = ("prediction", "interpolation", "retrodiction", "multishot")
TAREAS_UN_PLANO = ("prediction", "interpolation", "retrodiction")
GAP_MULTIPLANO = 20
PASOS_MUESTREO = 16


@dataclass(frozen=True)
class FlowState:
    """Muestra ruidosa z_t, su instante t, el ruido ε y el objetivo ε - z_0."""
    z_t: np.ndarray
    t: float
    eps: np.ndarray
    target: np.ndarray

    def reconstruct_z_t(self):
        """Recalcula z_t desde (ε, objetivo, t)."""
        z_0 = self.eps - self.target
        return self.t * z_0 + (1.0 - self.t) * self.eps


def flow_pair(z_0, eps, t):
    """
    Interpolación de flow matching.

    :param z_0: Datos limpios.
    :param eps: Ruido de la misma forma.
    :param t: Instante en [0, 1] (t = 1 son los datos, t = 0 el ruido).
    :return: FlowState.
    """
    z_0 = np.asarray(z_0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z_0.shape != eps.shape:
        raise ErrorContrato(f"z_0 {z_0.shape} y ε {eps.shape} con formas distintas")
    if not 0.0 <= t <= 1.0:
        raise ErrorDominio(f"t={t} fuera de [0, 1]")
    return FlowState(z_t=t * z_0 + (1.0 - t) * eps, t=float(t), eps=eps, target=eps - z_0)


@dataclass(frozen=True)
class TaskLayout:
    """
    Intervalos temporales [inicio, fin) de los chunks de contexto y del segmento actual.

    En multiplano, tomas consecutivas quedan separadas exactamente por `gap`
    índices temporales vacíos; en las tareas de un plano gap = 0.
    """
    task: str
    context_spans: tuple
    current_span: tuple
    gap: int = 0

    def __post_init__(self):
        if self.task not in TAREAS:
            raise ErrorConfiguracion(f"Tarea desconocida: {self.task!r}")
        if self.gap < 0:
            raise ErrorLayout(f"gap={self.gap} negativo")
        if self.task != "multishot" and self.gap != 0:
            raise ErrorLayout("Las tareas de un solo plano requieren gap = 0")
        intervalos = sorted(tuple(s) for s in self.context_spans + (self.current_span,))
        for inicio, fin in intervalos:
            if fin <= inicio:
                raise ErrorLayout(f"Intervalo vacío o invertido: [{inicio}, {fin})")
        for (_, fin_a), (inicio_b, _) in zip(intervalos, intervalos[1:]):
            if inicio_b < fin_a:
                raise ErrorLayout(f"Intervalos solapados: fin {fin_a} > inicio {inicio_b}")
            if self.task == "multishot" and inicio_b - fin_a != self.gap:
                raise ErrorLayout(
                    f"Tomas separadas por {inicio_b - fin_a} índices en lugar de gap={self.gap}")

    @classmethod
    def build(cls, task, context_lengths, current_length, gap=0):
        """
        Construye la disposición de una tarea.

        - prediction: contextos consecutivos desde 0 y el segmento actual después.
        - retrodiction: segmento actual desde 0 y los contextos después.
        - interpolation: la primera mitad (redondeada hacia arriba) de los
          contextos antes del segmento actual, el resto después.
        - multishot: tomas (contextos y actual) separadas por `gap` índices.
        """
        longitudes = [int(n) for n in context_lengths]
        if task == "multishot":
            tomas, t = [], 0
            for n in longitudes + [int(current_length)]:
                tomas.append((t, t + n))
                t += n + gap
            return cls(task, tuple(tomas[:-1]), tomas[-1], gap)
        if task == "prediction":
            antes, despues = longitudes, []
        elif task == "retrodiction":
            antes, despues = [], longitudes
        elif task == "interpolation":
            corte = (len(longitudes) + 1) // 2
            antes, despues = longitudes[:corte], longitudes[corte:]
        else:
            raise ErrorConfiguracion(f"Tarea desconocida: {task!r}")
        spans, t = [], 0
        for n in antes:
            spans.append((t, t + n))
            t += n
        actual = (t, t + int(current_length))
        t = actual[1]
        for n in despues:
            spans.append((t, t + n))
            t += n
        return cls(task, tuple(spans), actual, 0)

    @property
    def t_max(self):
        """Mayor índice temporal ocupado más uno."""
        return max(fin for _, fin in self.context_spans + (self.current_span,))


def assign_positions(layout, bundle, current_shape, n_text):
    """
    Posiciones RoPE de la secuencia [vídeo actual ∥ texto actual ∥ contexto].

    Cada token de contexto conserva la posición de su plan desplazada por el
    offset de su segmento; el vídeo actual ocupa su intervalo con posiciones
    enteras y el texto actual va detrás del mayor índice temporal global.

    :return: PositionLayout de T·H·W + n_text + bundle.n_tokens posiciones.
    """
    T, H, W = current_shape
    inicio, fin = layout.current_span
    if fin - inicio != T:
        raise ErrorLayout(f"Intervalo actual [{inicio},{fin}) para {T} fotogramas")
    if len(bundle) != len(layout.context_spans):
        raise ErrorLayout(
            f"{len(bundle)} chunks para {len(layout.context_spans)} intervalos de contexto")
    for chunk, offset, (c_inicio, c_fin) in zip(bundle.chunks, bundle.offsets,
                                                layout.context_spans):
        if offset != c_inicio or chunk.source_shape[0] != c_fin - c_inicio:
            raise ErrorLayout(f"Chunk con offset {offset} y {chunk.source_shape[0]} fotogramas "
                              f"no encaja en [{c_inicio},{c_fin})")
    video = grid_positions(T, H, W, t0=inicio)
    texto = text_layout(n_text, (layout.t_max, 1, 1))
    return video.concat(texto, bundle.local_layout())


class DiTParams:
    """
    Parámetros del DiT: proyecciones de entrada (vídeo, texto, contexto), mapa
    del instante t, B bloques y cabeza de salida (inicializada a cero).
    """

    def __init__(self, d_model=48, heads=4, blocks=4, seed=0):
        if d_model % heads or (d_model // heads) % 6:
            raise ErrorConfiguracion(
                f"d_model={d_model} con {heads} cabezas: el ancho por cabeza debe ser múltiplo de 6")
        rng = np.random.default_rng(seed)
        d = d_model
        self.d_model = d
        self.heads = heads
        self.video_in = init_normal("dit.video_in", (d, d), d, rng)
        self.video_in_b = init_zeros("dit.video_in_b", (d,))
        self.text_in = init_normal("dit.text_in", (d, d), d, rng)
        self.ctx_in = init_normal("dit.ctx_in", (d, d), d, rng)
        self.t_w1 = init_normal("dit.t_w1", (d, d), d, rng)
        self.t_b1 = init_zeros("dit.t_b1", (d,))
        self.t_w2 = init_normal("dit.t_w2", (d, d), d, rng)
        self.t_b2 = init_zeros("dit.t_b2", (d,))
        self.blocks = [BlockParams(f"dit.block.{i}", d, heads, rng) for i in range(blocks)]
        self.out_head = init_zeros("dit.out_head", (d, d))
        self.out_b = init_zeros("dit.out_b", (d,))

    def parameters(self):
        conjunto = ParameterSet([self.video_in, self.video_in_b, self.text_in, self.ctx_in,
                                 self.t_w1, self.t_b1, self.t_w2, self.t_b2])
        for bloque in self.blocks:
            conjunto.extend(bloque.parameters())
        conjunto.extend([self.out_head, self.out_b])
        return conjunto


def timestep_features(t, d):
    """Rasgos sinusoidales (1, d) del instante t (escala 1000·t)."""
    mitad = d // 2
    frecuencias = np.exp(-math.log(10000.0) * np.arange(mitad) / mitad)
    angulos = 1000.0 * t * frecuencias
    return np.concatenate([np.sin(angulos), np.cos(angulos)])[None, :]


def _embedding_tiempo(t, params):
    rasgos = Tensor(timestep_features(t, params.d_model))
    return linear(gelu(linear(rasgos, params.t_w1, params.t_b1)), params.t_w2, params.t_b2)


def predict_velocity(z_t, t, current_text, bundle, layout, params):
    """
    Velocidad predicha u_θ(z_t, t, texto, contexto).

    :param z_t: Tensor o array (T, H, W, d) del segmento actual.
    :param t: Instante en [0, 1].
    :param current_text: Tensor o array (L, d) del texto del segmento actual.
    :param bundle: ContextBundle (puede estar vacío).
    :param layout: TaskLayout de la tarea.
    :param params: DiTParams.
    :return: Tensor con la forma de z_t.
    """
    z_t = z_t if isinstance(z_t, Tensor) else Tensor(z_t)
    texto = current_text if isinstance(current_text, Tensor) else Tensor(current_text)
    T, H, W, d = z_t.shape
    if d != params.d_model:
        raise ErrorConfiguracion(f"Ancho de z_t {d} distinto de d_model={params.d_model}")
    contexto = bundle.tokens()
    if contexto is not None and contexto.shape[1] != params.d_model:
        raise ErrorConfiguracion(
            f"Ancho del contexto {contexto.shape[1]} distinto de d_model={params.d_model}")
    n_texto = int(texto.shape[0]) if texto.size else 0
    posiciones = assign_positions(layout, bundle, (T, H, W), n_texto)
    n_video = T * H * W
    n_actual = n_video + n_texto

    partes = [linear(reshape(z_t, (n_video, d)), params.video_in, params.video_in_b)]
    if n_texto:
        partes.append(linear(texto, params.text_in))
    x = add(concat(partes, axis=0), _embedding_tiempo(t, params))

    posiciones_ctx = posiciones[n_actual:]
    if contexto is not None:
        contexto = linear(contexto, params.ctx_in)
    for bloque in params.blocks:
        x = transformer_block(x, bloque, posiciones[:n_actual], context=contexto,
                              context_positions=posiciones_ctx)
    salida = linear(x[:n_video], params.out_head, params.out_b)
    return reshape(salida, (T, H, W, d))


def flow_loss(pred, state):
    """MSE entre la velocidad predicha y el objetivo ε - z_0, promediado por coordenada."""
    if tuple(pred.shape) != state.target.shape:
        raise ErrorContrato(f"Predicción {pred.shape} y objetivo {state.target.shape} distintos")
    return mse(pred, Tensor(state.target))


def initial_noise(shape, seed):
    """Ruido gaussiano inicial del muestreador."""
    return np.random.default_rng(seed).standard_normal(shape)


def sample_segment(params, bundle, layout, shape, text, steps=PASOS_MUESTREO, seed=0,
                   velocity_fn=None):
    """
    Integra dz/dt = -(ε - z_0) con Euler desde t = 0 hasta t = 1.

    :param shape: (T, H, W, d) del segmento a generar.
    :param text: Tokens de texto (L, d) del segmento.
    :param steps: Número de pasos K ≥ 1 (Δt = 1/K).
    :param seed: Semilla del ruido inicial.
    :param velocity_fn: Alternativa (z, t) -> velocidad; por defecto el DiT.
    :return: Array con la estimación de z_0.
    """
    if steps < 1:
        raise ErrorConfiguracion(f"steps={steps}: el muestreador necesita al menos un paso")
    z = initial_noise(shape, seed)
    dt = 1.0 / steps
    with no_grad():
        for k in range(steps):
            t = k * dt
            if velocity_fn is None:
                velocidad = predict_velocity(Tensor(z), t, text, bundle, layout, params).data
            else:
                velocidad = np.asarray(velocity_fn(z, t), dtype=np.float64)
            z = z - dt * velocidad
    return z
