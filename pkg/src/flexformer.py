"""
Este módulo implementa el autoencoder de compresión de contexto (FlexFormer).

El codificador replica un único token de consulta aprendible N veces, lo
concatena con los tokens de vídeo y texto de un segmento y toma, tras los
bloques de autoatención, las salidas de las posiciones de consulta. El
decodificador hace lo simétrico con dos consultas aprendibles (vídeo y texto)
replicadas hasta la longitud original.

Funciones principales:
- encode_segment / decode_segment: compresión y reconstrucción de un par vídeo-texto.
- reconstruction_loss: MSE sobre todas las coordenadas de vídeo y texto.
- encode_history: codifica cada segmento de la historia por separado y los reúne
  en un ContextBundle.

Variantes de posición de las consultas (`FlexFormerParams.variant`):
- 'irope': consulta única con posiciones interpoladas del retículo (por defecto).
- 'irope_mlp': como 'irope' más un MLP de los rasgos sinusoidales de posición.
- 'mrope_single': consulta única con posiciones 1D estilo texto.
- 'mrope_multi': número fijo de consultas distintas con posiciones 1D estilo texto.
"""
from dataclasses import dataclass, field

import numpy as np

from compression import FUTURO, PASADO, plan_queries
from errores import ErrorConfiguracion, ErrorContrato, ErrorLayout
from numerics import (BlockParams, Parameter, ParameterSet, Tensor, add, concat, init_normal,
                      init_zeros, linear, mse, repeat_rows, reshape, transformer_block, gelu)
from positional import PositionLayout, grid_positions, text_layout, text_style_positions

VARIANTES = ("irope", "irope_mlp", "mrope_single", "mrope_multi")


@dataclass
class Segment:
    """
    Par (vídeo, texto) de un segmento.

    :param video: Tensor (T, H, W, d) con la rejilla de tokens de vídeo.
    :param text: Tensor (L, d) con los tokens de texto (L puede ser 0).
    """
    video: Tensor
    text: Tensor

    def __post_init__(self):
        if len(self.video.shape) != 4 or min(self.video.shape[:3]) < 1:
            raise ErrorContrato(f"Rejilla de vídeo inválida: {self.video.shape}")
        if len(self.text.shape) != 2 or self.text.shape[1] != self.video.shape[3]:
            raise ErrorContrato(
                f"Texto {self.text.shape} incompatible con el vídeo {self.video.shape}")

    @classmethod
    def from_arrays(cls, video, text):
        """Construye un segmento desde arrays externos (rechaza valores no finitos)."""
        video = Tensor.from_external(video)
        texto = np.asarray(text, dtype=np.float64).reshape(-1, video.shape[-1])
        return cls(video, Tensor.from_external(texto))

    @property
    def grid(self):
        return tuple(int(v) for v in self.video.shape[:3])

    @property
    def shape(self):
        """(T, H, W, L)."""
        return self.grid + (int(self.text.shape[0]),)

    @property
    def d_model(self):
        return int(self.video.shape[3])

    @property
    def frames(self):
        return self.grid[0]

    def video_tokens(self):
        T, H, W = self.grid
        return reshape(self.video, (T * H * W, self.d_model))


@dataclass
class ContextChunk:
    """
    Tokens comprimidos de un par vídeo-texto.

    Guarda el plan que los produjo (necesario para posicionarlos en el DiT y
    para decodificarlos) y las posiciones realmente usadas por el codificador.
    """
    tokens: Tensor
    plan: object
    source_shape: tuple
    layout: PositionLayout

    @property
    def n_tokens(self):
        return int(self.tokens.shape[0])


@dataclass
class ContextBundle:
    """Colección ordenada de chunks de la historia completa con sus desplazamientos temporales."""
    chunks: list = field(default_factory=list)
    offsets: list = field(default_factory=list)

    def __len__(self):
        return len(self.chunks)

    @property
    def n_tokens(self):
        return sum(chunk.n_tokens for chunk in self.chunks)

    @property
    def plans(self):
        return [chunk.plan for chunk in self.chunks]

    def tokens(self):
        """Tensor (M, d) con todos los tokens de contexto, o None si está vacío."""
        if not self.chunks:
            return None
        return concat([chunk.tokens for chunk in self.chunks], axis=0)

    def local_layout(self):
        """Posiciones de los tokens de cada chunk desplazadas por su offset temporal."""
        if not self.chunks:
            return PositionLayout.empty()
        trozos = [chunk.layout.shifted(offset) for chunk, offset in zip(self.chunks, self.offsets)]
        return trozos[0].concat(*trozos[1:])

    def detached(self):
        """Copia sin historial de gradiente (FlexFormer congelado)."""
        return ContextBundle(
            [ContextChunk(c.tokens.detach(), c.plan, c.source_shape, c.layout)
             for c in self.chunks],
            list(self.offsets))


class FlexFormerParams:
    """
    Parámetros del autoencoder.

    :param d_model: Ancho de los tokens (múltiplo de 6 por cabeza).
    :param heads: Número de cabezas de atención.
    :param enc_blocks: Bloques del codificador (E).
    :param dec_blocks: Bloques del decodificador (D).
    :param seed: Semilla de inicialización.
    :param variant: Una de VARIANTES.
    :param n_fixed_queries: Número de consultas de la variante 'mrope_multi'.
    """

    def __init__(self, d_model=48, heads=4, enc_blocks=4, dec_blocks=4, seed=0,
                 variant="irope", n_fixed_queries=None):
        if d_model % heads or (d_model // heads) % 6:
            raise ErrorConfiguracion(
                f"d_model={d_model} con {heads} cabezas: el ancho por cabeza debe ser múltiplo de 6")
        if variant not in VARIANTES:
            raise ErrorConfiguracion(f"Variante desconocida: {variant!r}")
        if variant == "mrope_multi" and not n_fixed_queries:
            raise ErrorConfiguracion("La variante 'mrope_multi' necesita n_fixed_queries")
        rng = np.random.default_rng(seed)
        d = d_model
        self.d_model = d
        self.heads = heads
        self.variant = variant
        self.n_fixed_queries = n_fixed_queries
        self.enc_in = init_normal("flexformer.enc_in", (d, d), d, rng)
        self.q_enc = Parameter("flexformer.q_enc", 0.5 * rng.standard_normal(d))
        self.encoder = [BlockParams(f"flexformer.enc.{i}", d, heads, rng) for i in range(enc_blocks)]
        self.decoder = [BlockParams(f"flexformer.dec.{i}", d, heads, rng) for i in range(dec_blocks)]
        self.q_vid = Parameter("flexformer.q_vid", 0.5 * rng.standard_normal(d))
        self.q_txt = Parameter("flexformer.q_txt", 0.5 * rng.standard_normal(d))
        self.dec_out = Parameter("flexformer.dec_out", np.eye(d))
        self.dec_out_b = init_zeros("flexformer.dec_out_b", (d,))

        self.extra = []
        if variant == "irope_mlp":
            self.q_mlp_w1 = init_normal("flexformer.q_mlp_w1", (d, d), d, rng)
            self.q_mlp_b1 = init_zeros("flexformer.q_mlp_b1", (d,))
            self.q_mlp_w2 = init_zeros("flexformer.q_mlp_w2", (d, d))
            self.extra = [self.q_mlp_w1, self.q_mlp_b1, self.q_mlp_w2]
        elif variant == "mrope_multi":
            self.q_multi = Parameter("flexformer.q_multi",
                                     0.5 * rng.standard_normal((n_fixed_queries, d)))
            self.extra = [self.q_multi]

    def parameters(self):
        """ParameterSet en orden fijo de registro."""
        conjunto = ParameterSet([self.enc_in, self.q_enc])
        for bloque in self.encoder:
            conjunto.extend(bloque.parameters())
        for bloque in self.decoder:
            conjunto.extend(bloque.parameters())
        conjunto.extend([self.q_vid, self.q_txt, self.dec_out, self.dec_out_b])
        conjunto.extend(self.extra)
        return conjunto

    def query_tokens(self, plan, grid, n_text):
        """
        Tokens de consulta replicados y sus posiciones para un plan.

        :return: (Tensor (N, d), PositionLayout de N posiciones).
        """
        T = grid[0]
        n = plan.n_queries
        if self.variant in ("irope", "irope_mlp"):
            posiciones = plan.positions
        else:
            posiciones = text_style_positions(n, T + n_text)

        if self.variant == "mrope_multi":
            if n != self.n_fixed_queries:
                raise ErrorConfiguracion(
                    f"El conjunto fijo tiene {self.n_fixed_queries} consultas y el plan pide {n}")
            return self.q_multi, posiciones

        consultas = repeat_rows(self.q_enc, n)
        if self.variant == "irope_mlp":
            cos, sin = posiciones.rope_tables(self.d_model)
            rasgos = Tensor(np.concatenate([cos, sin], axis=1))
            oculto = gelu(linear(rasgos, self.q_mlp_w1, self.q_mlp_b1))
            consultas = add(consultas, linear(oculto, self.q_mlp_w2))
        return consultas, posiciones


def _comprobar_ancho(d, params):
    if d != params.d_model:
        raise ErrorConfiguracion(f"Ancho {d} distinto de d_model={params.d_model}")


def encode_segment(seg, strategy, orientation, params):
    """
    Comprime un segmento en N tokens de contexto.

    La secuencia [vídeo ∥ texto ∥ consultas] pasa por los E bloques del
    codificador con posiciones enteras para el vídeo, `text_positions` para el
    texto y las posiciones del plan para las consultas.

    :param seg: Segment de entrada.
    :param strategy: CompressionStrategy.
    :param orientation: PASADO o FUTURO respecto al segmento generado.
    :param params: FlexFormerParams.
    :return: ContextChunk con N = plan.n_queries tokens.
    """
    _comprobar_ancho(seg.d_model, params)
    T, H, W, L = seg.shape
    plan = plan_queries((T, H, W), strategy, orientation)
    consultas, posiciones_q = params.query_tokens(plan, (T, H, W), L)

    partes = [linear(seg.video_tokens(), params.enc_in)]
    if L:
        partes.append(linear(seg.text, params.enc_in))
    partes.append(consultas)
    x = concat(partes, axis=0)
    posiciones = grid_positions(T, H, W).concat(text_layout(L, (T, H, W)), posiciones_q)
    for bloque in params.encoder:
        x = transformer_block(x, bloque, posiciones)
    inicio = T * H * W + L
    return ContextChunk(tokens=x[inicio:], plan=plan, source_shape=(T, H, W, L),
                        layout=posiciones_q)


def decode_segment(chunk, params):
    """
    Reconstruye vídeo y texto a partir de un chunk.

    q_vid se replica T·H·W veces en las posiciones enteras del retículo y q_txt
    L veces en las posiciones de texto; los tokens de contexto conservan sus
    posiciones de codificación.
    """
    _comprobar_ancho(int(chunk.tokens.shape[1]), params)
    T, H, W, L = chunk.source_shape
    n_video = T * H * W
    x = concat([chunk.tokens, repeat_rows(params.q_vid, n_video),
                repeat_rows(params.q_txt, L)], axis=0)
    posiciones = chunk.layout.concat(grid_positions(T, H, W), text_layout(L, (T, H, W)))
    for bloque in params.decoder:
        x = transformer_block(x, bloque, posiciones)
    salida = linear(x[chunk.n_tokens:], params.dec_out, params.dec_out_b)
    video = reshape(salida[:n_video], (T, H, W, params.d_model))
    return Segment(video, salida[n_video:])


def reconstruction_loss(recon, target):
    """MSE sobre todas las coordenadas de vídeo y texto, con el mismo peso."""
    if recon.shape != target.shape or recon.d_model != target.d_model:
        raise ErrorContrato(f"Formas distintas: {recon.shape} vs {target.shape}")

    def aplanar(seg):
        partes = [reshape(seg.video, (-1,))]
        if seg.shape[3]:
            partes.append(reshape(seg.text, (-1,)))
        return concat(partes, axis=0)
    return mse(aplanar(recon), aplanar(target))


def encode_history(segments, strategy, params, layout=None):
    """
    Codifica cada segmento de la historia por separado y concatena los chunks.

    :param segments: Lista ordenada de Segment (puede estar vacía).
    :param strategy: CompressionStrategy.
    :param params: FlexFormerParams.
    :param layout: TaskLayout opcional; decide la orientación de cada segmento
        (antes o después del segmento generado) y su offset temporal. Sin él, la
        historia precede al segmento generado en orden consecutivo.
    :return: ContextBundle.
    """
    if layout is None:
        offsets, orientaciones, t = [], [], 0
        for seg in segments:
            offsets.append(t)
            orientaciones.append(PASADO)
            t += seg.frames
    else:
        if len(layout.context_spans) != len(segments):
            raise ErrorLayout(
                f"{len(segments)} segmentos para {len(layout.context_spans)} intervalos de contexto")
        offsets, orientaciones = [], []
        for seg, (inicio, fin) in zip(segments, layout.context_spans):
            if fin - inicio != seg.frames:
                raise ErrorLayout(f"Intervalo [{inicio},{fin}) para un segmento de {seg.frames} "
                                  "fotogramas")
            offsets.append(inicio)
            orientaciones.append(PASADO if fin <= layout.current_span[0] else FUTURO)

    chunks = [encode_segment(seg, strategy, orientacion, params)
              for seg, orientacion in zip(segments, orientaciones)]
    return ContextBundle(chunks, offsets)
