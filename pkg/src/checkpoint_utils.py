"""
Módulo checkpoint_utils.py
--------------------------
Funciones comunes de persistencia: checkpoints de parámetros, volcados de
rejillas de tokens y de chunks de contexto, y CSV de resultados.
Incluye la documentación del formato binario `LVCK`.

Formato `LVCK` (little-endian):
-------------------------------
- Cabecera: `magic` (4 bytes, `b"LVCK"`) y `version` (u32, actualmente 1).
- Registros consecutivos hasta el final del fichero; cada uno:
  - `longitud_nombre` (u32) y `nombre` (UTF-8, p. ej. `flexformer.enc.0.wq`).
  - `rango` (u32) y `dims` (rango × u32).
  - `datos`: producto(dims) valores float64 (`<f8`) en orden por filas.

Los registros se escriben en el orden del diccionario de entrada, de modo que
el mismo estado produce siempre los mismos bytes. La escritura es atómica:
se escribe un fichero temporal en el mismo directorio y se renombra con
`os.replace`.
"""
import os
import struct
import tempfile

import numpy as np

from errores import ErrorCheckpoint

MAGIC = b"LVCK"
VERSION = 1
_U32 = struct.Struct("<I")


def _escribir_atomico(ruta, contenido):
    ruta = os.path.abspath(ruta)
    directorio = os.path.dirname(ruta)
    os.makedirs(directorio, exist_ok=True)
    descriptor, temporal = tempfile.mkstemp(dir=directorio, prefix=".tmp_", suffix=".part")
    try:
        with os.fdopen(descriptor, "wb") as f:
            f.write(contenido)
        os.replace(temporal, ruta)
    except OSError:
        if os.path.exists(temporal):
            os.remove(temporal)
        raise
    return ruta


def serializar(estado):
    """
    Codifica un diccionario nombre -> array en bytes `LVCK`.

    :param estado: Diccionario ordenado de arrays.
    :return: bytes.
    """
    partes = [MAGIC, _U32.pack(VERSION)]
    for nombre, valor in estado.items():
        array = np.asarray(valor, dtype="<f8")
        nombre_bytes = nombre.encode("utf-8")
        partes.append(_U32.pack(len(nombre_bytes)))
        partes.append(nombre_bytes)
        partes.append(_U32.pack(array.ndim))
        partes.extend(_U32.pack(int(dim)) for dim in array.shape)
        partes.append(array.tobytes(order="C"))
    return b"".join(partes)


def deserializar(contenido):
    """
    Decodifica bytes `LVCK` en un diccionario nombre -> array.

    :raises ErrorCheckpoint: Si la cabecera no es válida o el contenido está truncado.
    """
    vista = memoryview(contenido)
    cursor = 0

    def leer(n):
        nonlocal cursor
        if cursor + n > len(vista):
            raise ErrorCheckpoint(f"Checkpoint truncado en el byte {cursor}")
        trozo = vista[cursor:cursor + n]
        cursor += n
        return trozo

    def leer_u32():
        return _U32.unpack(leer(4))[0]

    if bytes(leer(4)) != MAGIC:
        raise ErrorCheckpoint("Cabecera desconocida: no es un fichero LVCK")
    version = leer_u32()
    if version != VERSION:
        raise ErrorCheckpoint(f"Versión LVCK {version} no soportada")
    estado = {}
    while cursor < len(vista):
        try:
            nombre = bytes(leer(leer_u32())).decode("utf-8")
        except UnicodeDecodeError as e:
            raise ErrorCheckpoint("Nombre de registro no es UTF-8") from e
        forma = tuple(leer_u32() for _ in range(leer_u32()))
        n_valores = int(np.prod(forma, dtype=np.int64))
        datos = np.frombuffer(leer(8 * n_valores), dtype="<f8")
        estado[nombre] = datos.astype(np.float64).reshape(forma)
    return estado


def save_checkpoint(ruta, estado):
    """
    Guarda un estado de parámetros en formato `LVCK`.

    :param ruta: Ruta del fichero de destino.
    :param estado: Diccionario nombre -> array (ParameterSet.state()).
    :return: Ruta absoluta escrita.
    """
    return _escribir_atomico(ruta, serializar(estado))


def load_checkpoint(ruta):
    """Lee un fichero `LVCK`; ErrorCheckpoint si no existe o es ilegible."""
    if not os.path.exists(ruta):
        raise ErrorCheckpoint(f"No se encontró el checkpoint: {ruta}")
    with open(ruta, "rb") as f:
        return deserializar(f.read())


def save_token_grid(ruta, video, text=None):
    """Vuelca una rejilla de tokens (T, H, W, d) y, si se pasa, su texto (L, d)."""
    estado = {"video": np.asarray(video)}
    if text is not None:
        estado["text"] = np.asarray(text)
    return save_checkpoint(ruta, estado)


def load_token_grid(ruta):
    """Devuelve (video, text) de un volcado; text es None si no se guardó."""
    estado = load_checkpoint(ruta)
    if "video" not in estado:
        raise ErrorCheckpoint(f"{ruta} no contiene el registro 'video'")
    return estado["video"], estado.get("text")


def save_bundle(ruta, bundle):
    """
    Vuelca un ContextBundle: por cada chunk sus tokens, sus posiciones y su
    offset temporal (`chunk.<i>.tokens`, `chunk.<i>.positions`, `chunk.<i>.offset`).
    """
    estado = {}
    for i, (chunk, offset) in enumerate(zip(bundle.chunks, bundle.offsets)):
        estado[f"chunk.{i}.tokens"] = chunk.tokens.data
        estado[f"chunk.{i}.positions"] = chunk.layout.coords
        estado[f"chunk.{i}.offset"] = np.array([offset], dtype=np.float64)
    return save_checkpoint(ruta, estado)


def save_csv(df, ruta):
    """CSV con saltos de línea LF y punto decimal; escritura atómica."""
    contenido = df.to_csv(index=False, lineterminator="\n", float_format="%.10g")
    return _escribir_atomico(ruta, contenido.encode("utf-8"))
