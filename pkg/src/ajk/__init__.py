"""Affine processes whose time runs on a general nondecreasing driver ``A``."""
