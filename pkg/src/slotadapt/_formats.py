# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""SLOTADAPT: file formats for images, tables and datasets

All elements of this module are implementation details that may change in
non-backward-compatible ways between minor or micro version releases.

Images are binary PPM (P6) files with 8-bit channels. Tables are UTF-8 CSV
files with a header row, LF line endings and "." as decimal separator; floats
are written with the shortest representation that reads back exactly, and
missing values as empty fields. A dataset is a directory of PPM images named
scene-NNNNN.ppm plus an annotations.csv file listing the objects of every
scene.

Constants:
    ANNOTATION_COLUMNS -- columns of annotations.csv

Classes:
    FormatError -- malformed image or annotation file

Functions:
    write_ppm -- write image to PPM file
    read_ppm -- read image from PPM file
    write_csv -- write table to CSV file
    read_csv -- read table from CSV file
    mask_overlay -- color image by most likely slot of every token
    export_dataset -- write scenes to dataset directory
    import_dataset -- read scenes from dataset directory
"""

__all__ = ['ANNOTATION_COLUMNS', 'FormatError', 'write_ppm', 'read_ppm',
           'write_csv', 'read_csv', 'mask_overlay', 'export_dataset',
           'import_dataset']

import colorsys
import csv
import logging
from pathlib import Path

import numpy as np
import regex

from slotadapt._engine import synth
from slotadapt._engine.detector import Target

# Logging
_misc_logger = logging.getLogger('slotadapt.log')

ANNOTATION_COLUMNS = ('scene_id', 'class', 'cx', 'cy', 'w', 'h')

# Header of binary PPM: magic number, width, height and maximum value,
# separated by whitespace, with optional comments.
_PPM_HEADER = regex.compile(
    rb'P6(?:\s++(?:#[^\n]*+\n)?)*+(\d++)(?:\s++(?:#[^\n]*+\n)?)*+(\d++)'
    rb'(?:\s++(?:#[^\n]*+\n)?)*+(\d++)\s')
_SCENE_NAME = 'scene-%05i.ppm'
# Opacity of slot colors in mask overlays
_OVERLAY_ALPHA = 0.6


class FormatError(Exception):
    """Malformed image or annotation file.

    Methods:
        __init__: initializer
    """

    def __init__(self, path, reason):
        """Initialize exception.

        Arguments:
            path -- path of file
            reason -- description of the problem
        """
        super().__init__('Invalid file %s: %s.' % (path, reason))


def write_ppm(path, image):
    """Write image to binary PPM file.

    Arguments:
        path -- destination path
        image -- numpy array (H, W, 3) of values in [0, 1], quantized to
            round(255 value) after clipping
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError('PPM images must have shape (H, W, 3).')
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    header = b'P6\n%i %i\n255\n' % (image.shape[1], image.shape[0])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as out_file:
        out_file.write(header + pixels.tobytes())


def read_ppm(path):
    """Read binary PPM file with 8-bit channels.

    Returns:
        numpy array (H, W, 3) of values in [0, 1]

    Exceptions:
        FormatError -- not an 8-bit P6 file, or truncated
    """
    with open(path, 'rb') as in_file:
        data = in_file.read()
    match = _PPM_HEADER.match(data)
    if match is None:
        raise FormatError(path, 'not a binary PPM (P6) image')
    width, height, maximum = (int(value) for value in match.groups())
    if maximum != 255:
        raise FormatError(path, 'maximum value %i (only 255 supported)'
                          % maximum)
    body = data[match.end():]
    if len(body) != width * height * 3:
        raise FormatError(path, 'expected %i bytes of pixels, found %i'
                          % (width * height * 3, len(body)))
    pixels = np.frombuffer(body, dtype=np.uint8)
    return pixels.reshape(height, width, 3) / 255.0


def _cell(value):
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_csv(path, columns, rows):
    """Write table to CSV file with header row.

    Arguments:
        path -- destination path
        columns -- sequence of column names
        rows -- iterable of rows, either sequences in column order or
            dictionaries keyed by column name (missing keys left empty)
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as out_file:
        writer = csv.writer(out_file, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(column) for column in columns]
            writer.writerow([_cell(value) for value in row])


def read_csv(path):
    """Read CSV file with header row.

    Returns:
        2-tuple: list of column names and list of rows (lists of strings)
    """
    with open(path, encoding='utf-8', newline='') as in_file:
        reader = csv.reader(in_file)
        rows = list(reader)
    if not rows:
        raise FormatError(path, 'missing header row')
    return rows[0], rows[1:]


def mask_overlay(image, masks, grid):
    """Color image by most likely slot of every token.

    Every slot receives a distinct hue; the pixels of each patch take the
    color of the slot with the largest mask value for the patch, blended with
    the image.

    Arguments:
        image -- numpy array (H, W, 3)
        masks -- numpy array (K, N) of mask values over the N tokens
        grid -- (rows, columns) of tokens, with rows * columns = N

    Returns:
        numpy array (H, W, 3)
    """
    image = np.asarray(image, dtype=float)
    masks = np.asarray(masks, dtype=float)
    count = masks.shape[0]
    rows, columns = grid
    palette = np.array([colorsys.hsv_to_rgb(k / count, 0.9, 1.0)
                        for k in range(count)])
    winners = np.argmax(masks, axis=0).reshape(rows, columns)
    colors = palette[winners]
    scale_y, scale_x = image.shape[0] // rows, image.shape[1] // columns
    colors = np.repeat(np.repeat(colors, scale_y, axis=0), scale_x, axis=1)
    return (1 - _OVERLAY_ALPHA) * image + _OVERLAY_ALPHA * colors


def export_dataset(directory, scenes):
    """Write scenes to dataset directory.

    Arguments:
        directory -- destination directory (created if needed)
        scenes -- sequence of Scene objects; scene ids are their positions
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for index, scene in enumerate(scenes):
        write_ppm(directory / (_SCENE_NAME % index), scene.image)
        for obj in scene.objects:
            rows.append((index, obj.label) + tuple(obj.box))
    write_csv(directory / 'annotations.csv', ANNOTATION_COLUMNS, rows)
    _misc_logger.info('Wrote %i scenes to %s', len(scenes), directory)


def import_dataset(directory, domain):
    """Read scenes from dataset directory.

    Scene seeds are unknown after a round trip through files and are set to
    the scene ids.

    Arguments:
        directory -- dataset directory
        domain -- domain tag given to the scenes

    Returns:
        list of Scene objects

    Exceptions:
        FileNotFoundError -- missing directory, annotations or image
        FormatError -- malformed annotations
    """
    directory = Path(directory)
    columns, rows = read_csv(directory / 'annotations.csv')
    if tuple(columns) != ANNOTATION_COLUMNS:
        raise FormatError(directory / 'annotations.csv',
                          'expected columns %s'
                          % ', '.join(ANNOTATION_COLUMNS))
    objects = {}
    for row in rows:
        try:
            if len(row) != len(ANNOTATION_COLUMNS):
                raise ValueError
            scene_id, label = int(row[0]), int(row[1])
            box = tuple(float(value) for value in row[2:])
        except ValueError:
            raise FormatError(directory / 'annotations.csv',
                              'malformed row %s' % ','.join(row)) from None
        if label not in synth.CLASS_NAMES:
            raise FormatError(directory / 'annotations.csv',
                              'unknown class %i' % label)
        objects.setdefault(scene_id, []).append(Target(box, label))
    scenes = []
    index = 0
    while (directory / (_SCENE_NAME % index)).is_file():
        image = read_ppm(directory / (_SCENE_NAME % index))
        scenes.append(synth.Scene(image, tuple(objects.get(index, ())),
                                  domain, index))
        index += 1
    if not scenes:
        raise FileNotFoundError('No scene images in %s' % directory)
    _misc_logger.info('Read %i scenes from %s', len(scenes), directory)
    return scenes
